#include "flsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "flsim/kernels.hpp"

namespace flsim::nn {

using kernels::ConstView;
using kernels::MutView;
using kernels::Trans;

Architecture Architecture::mlp(std::vector<std::size_t> widths, double leaky_alpha) {
    Architecture arch;
    arch.widths = std::move(widths);
    arch.leaky_alpha = leaky_alpha;
    if (arch.widths.size() >= 2) {
        arch.activations.assign(arch.widths.size() - 1, Activation::leaky_relu);
        arch.activations.back() = Activation::linear;
    }
    return arch;
}

std::size_t Architecture::parameter_count() const {
    std::size_t d = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        d += widths[i] * widths[i + 1] + widths[i + 1];
    }
    return d;
}

std::size_t Model::input_dim() const { return layers.empty() ? 0 : layers.front().in(); }
std::size_t Model::output_dim() const { return layers.empty() ? 0 : layers.back().out(); }

std::size_t Model::parameter_count() const {
    std::size_t d = 0;
    for (const auto& layer : layers) {
        d += layer.parameter_count();
    }
    return d;
}

Architecture Model::architecture() const {
    Architecture arch;
    if (layers.empty()) {
        return arch;
    }
    arch.widths.push_back(layers.front().in());
    arch.leaky_alpha = layers.front().alpha;
    for (const auto& layer : layers) {
        arch.widths.push_back(layer.out());
        arch.activations.push_back(layer.activation);
    }
    return arch;
}

void validate(const Architecture& arch) {
    if (arch.widths.size() < 2 || arch.activations.size() + 1 != arch.widths.size()) {
        throw ConfigError("architecture needs at least one layer and one activation per layer");
    }
    for (auto w : arch.widths) {
        if (w == 0) {
            throw ConfigError("architecture widths must be positive");
        }
    }
    if (!(arch.leaky_alpha > 0.0)) {
        throw ConfigError("leaky-ReLU alpha must be > 0");
    }
}

void validate(const Model& model) {
    if (model.layers.empty()) {
        throw ConfigError("model has no layers");
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& layer = model.layers[i];
        if (layer.bias.size() != layer.out()) {
            throw ConfigError("layer " + std::to_string(i) + ": bias length does not match output width");
        }
        if (i + 1 < model.layers.size() && layer.out() != model.layers[i + 1].in()) {
            throw ConfigError("layer " + std::to_string(i) + " output does not chain into layer " +
                              std::to_string(i + 1));
        }
        if (layer.activation == Activation::leaky_relu && !(layer.alpha > 0.0)) {
            throw ConfigError("leaky-ReLU alpha must be > 0");
        }
    }
}

Model init_model(const Architecture& arch, Rng& rng) {
    validate(arch);
    Model model;
    for (std::size_t i = 0; i < arch.layer_count(); ++i) {
        const std::size_t fan_in = arch.widths[i];
        const std::size_t fan_out = arch.widths[i + 1];
        Layer layer{Matrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0), arch.activations[i],
                    arch.leaky_alpha};
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& w : layer.weight.values()) {
            w = rng.uniform(-limit, limit);
        }
        model.layers.push_back(std::move(layer));
    }
    return model;
}

double leaky_relu(double x, double alpha) noexcept { return x < 0.0 ? alpha * x : x; }

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto in = logits.row(r);
        auto dst = out.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            dst[j] = std::exp(in[j] - mx);
            sum += dst[j];
        }
        for (double& v : dst) {
            v /= sum;
        }
    }
    return out;
}

namespace {

Matrix affine(const Layer& layer, const Matrix& x) {
    if (x.cols() != layer.in()) {
        throw ConfigError("forward: input width " + std::to_string(x.cols()) + " does not match layer input " +
                          std::to_string(layer.in()));
    }
    Matrix z(x.rows(), layer.out());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        std::copy(layer.bias.begin(), layer.bias.end(), z.row(r).begin());
    }
    kernels::gemm(Trans::no, x, Trans::no, layer.weight, z, 1.0, 1.0);
    return z;
}

Matrix activate(const Layer& layer, const Matrix& z) {
    switch (layer.activation) {
        case Activation::linear:
            return z;
        case Activation::leaky_relu: {
            Matrix a = z;
            for (double& v : a.values()) {
                v = leaky_relu(v, layer.alpha);
            }
            return a;
        }
        case Activation::softmax_out:
            return softmax_rows(z);
    }
    return z;
}

// dL/dz from dL/da for one layer.
Matrix activation_backward(const Layer& layer, const Matrix& z, const Matrix& da) {
    switch (layer.activation) {
        case Activation::linear:
            return da;
        case Activation::leaky_relu: {
            Matrix dz = da;
            for (std::size_t i = 0; i < dz.size(); ++i) {
                if (z.data()[i] < 0.0) {
                    dz.data()[i] *= layer.alpha;
                }
            }
            return dz;
        }
        case Activation::softmax_out: {
            const Matrix p = softmax_rows(z);
            Matrix dz(da.rows(), da.cols());
            for (std::size_t r = 0; r < da.rows(); ++r) {
                const double inner = kernels::dot(da.row(r), p.row(r));
                for (std::size_t j = 0; j < da.cols(); ++j) {
                    dz(r, j) = p(r, j) * (da(r, j) - inner);
                }
            }
            return dz;
        }
    }
    return da;
}

// Backpropagates dL/d(pre-activation of the last layer).
void backward_from_last_pre(const Model& model, const ForwardCache& cache, Matrix dz, std::span<double> grad) {
    if (grad.size() != model.parameter_count()) {
        throw InputError("gradient buffer length does not match parameter count");
    }
    std::size_t offset = grad.size();
    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const Layer& layer = model.layers[li];
        offset -= layer.parameter_count();
        const Matrix& x = cache.inputs[li];
        MutView dw(grad.data() + offset, layer.in(), layer.out());
        kernels::gemm(Trans::yes, x, Trans::no, dz, dw);
        double* db = grad.data() + offset + layer.weight.size();
        std::fill(db, db + layer.out(), 0.0);
        for (std::size_t r = 0; r < dz.rows(); ++r) {
            auto row = dz.row(r);
            for (std::size_t j = 0; j < row.size(); ++j) {
                db[j] += row[j];
            }
        }
        if (li == 0) {
            break;
        }
        Matrix dx(dz.rows(), layer.in());
        kernels::gemm(Trans::no, dz, Trans::yes, layer.weight, dx);
        dz = activation_backward(model.layers[li - 1], cache.pre[li - 1], dx);
    }
}

}  // namespace

Matrix forward(const Model& model, const Matrix& batch) {
    return forward_prefix(model, batch, model.layers.size());
}

Matrix forward(const Model& model, const Matrix& batch, ForwardCache& cache) {
    cache.inputs.clear();
    cache.pre.clear();
    Matrix a = batch;
    for (const auto& layer : model.layers) {
        Matrix z = affine(layer, a);
        Matrix next = activate(layer, z);
        cache.inputs.push_back(std::move(a));
        cache.pre.push_back(std::move(z));
        a = std::move(next);
    }
    cache.output = a;
    return a;
}

Matrix forward_prefix(const Model& model, const Matrix& batch, std::size_t n_layers) {
    if (n_layers > model.layers.size()) {
        throw ConfigError("forward_prefix: model has fewer layers than requested");
    }
    Matrix a = batch;
    for (std::size_t i = 0; i < n_layers; ++i) {
        a = activate(model.layers[i], affine(model.layers[i], a));
    }
    return a;
}

void backward(const Model& model, const ForwardCache& cache, const Matrix& d_output, std::span<double> grad) {
    const Layer& last = model.layers.back();
    backward_from_last_pre(model, cache, activation_backward(last, cache.pre.back(), d_output), grad);
}

namespace {

void check_labels(const Model& model, const Matrix& batch, std::span<const int> labels) {
    if (labels.size() != batch.rows()) {
        throw InputError("label count does not match batch rows");
    }
    const auto classes = static_cast<int>(model.output_dim());
    for (int y : labels) {
        if (y < 0 || y >= classes) {
            throw InputError("label " + std::to_string(y) + " out of range [0, " + std::to_string(classes) + ")");
        }
    }
}

// Mean cross-entropy from logits; fills dz with (softmax - onehot) / B when given.
double cross_entropy_from_logits(const Matrix& logits, std::span<const int> labels, Matrix* dz) {
    const Matrix p = softmax_rows(logits);
    const double inv_b = 1.0 / static_cast<double>(logits.rows());
    double loss = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto z = logits.row(r);
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) {
            sum += std::exp(v - mx);
        }
        loss += (mx + std::log(sum)) - z[static_cast<std::size_t>(labels[r])];
    }
    if (dz != nullptr) {
        *dz = p;
        for (std::size_t r = 0; r < p.rows(); ++r) {
            (*dz)(r, static_cast<std::size_t>(labels[r])) -= 1.0;
        }
        for (double& v : dz->values()) {
            v *= inv_b;
        }
    }
    return loss * inv_b;
}

}  // namespace

LossAndGradient backward_cross_entropy(const Model& model, const Matrix& batch, std::span<const int> labels) {
    check_labels(model, batch, labels);
    ForwardCache cache;
    forward(model, batch, cache);
    Matrix dz;
    const double loss = cross_entropy_from_logits(cache.pre.back(), labels, &dz);
    LossAndGradient out{loss, UpdateVector(model.parameter_count())};
    backward_from_last_pre(model, cache, std::move(dz), out.grad);
    return out;
}

double cross_entropy_loss(const Model& model, const Matrix& batch, std::span<const int> labels) {
    check_labels(model, batch, labels);
    ForwardCache cache;
    forward(model, batch, cache);
    return cross_entropy_from_logits(cache.pre.back(), labels, nullptr);
}

namespace {

template <typename Fn>
void for_each_parameter_block(Model& model, Fn&& fn) {
    std::size_t offset = 0;
    for (auto& layer : model.layers) {
        fn(layer.weight.values(), offset);
        offset += layer.weight.size();
        fn(std::span<double>(layer.bias), offset);
        offset += layer.bias.size();
    }
}

}  // namespace

void sgd_step_inplace(Model& params, std::span<const double> grad, double lr) {
    if (grad.size() != params.parameter_count()) {
        throw InputError("sgd_step: gradient length does not match parameter count");
    }
    for_each_parameter_block(params, [&](std::span<double> block, std::size_t offset) {
        for (std::size_t i = 0; i < block.size(); ++i) {
            block[i] -= lr * grad[offset + i];
        }
    });
}

Model sgd_step(Model params, std::span<const double> grad, double lr) {
    sgd_step_inplace(params, grad, lr);
    return params;
}

AdamState AdamState::for_model(const Model& model, double lr) {
    AdamState state;
    state.m.assign(model.parameter_count(), 0.0);
    state.v.assign(model.parameter_count(), 0.0);
    state.lr = lr;
    return state;
}

void adam_step_inplace(AdamState& state, Model& params, std::span<const double> grad) {
    const std::size_t d = params.parameter_count();
    if (grad.size() != d || state.m.size() != d || state.v.size() != d) {
        throw InputError("adam_step: state/gradient length does not match parameter count");
    }
    ++state.t;
    const auto t = static_cast<double>(state.t);
    const kernels::AdamCoefficients k{state.lr, state.beta1, state.beta2, state.eps,
                                      1.0 - std::pow(state.beta1, t), 1.0 - std::pow(state.beta2, t)};
    for_each_parameter_block(params, [&](std::span<double> block, std::size_t offset) {
        kernels::adam_update(block, std::span(state.m).subspan(offset, block.size()),
                             std::span(state.v).subspan(offset, block.size()), grad.subspan(offset, block.size()),
                             k);
    });
}

std::pair<Model, AdamState> adam_step(AdamState state, Model params, std::span<const double> grad) {
    adam_step_inplace(state, params, grad);
    return {std::move(params), std::move(state)};
}

UpdateVector flatten(const Model& model) {
    UpdateVector out;
    out.reserve(model.parameter_count());
    for (const auto& layer : model.layers) {
        out.insert(out.end(), layer.weight.values().begin(), layer.weight.values().end());
        out.insert(out.end(), layer.bias.begin(), layer.bias.end());
    }
    return out;
}

Model unflatten(std::span<const double> values, const Architecture& arch) {
    validate(arch);
    if (values.size() != arch.parameter_count()) {
        throw InputError("unflatten: vector length " + std::to_string(values.size()) +
                         " does not match parameter count " + std::to_string(arch.parameter_count()));
    }
    Model model;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < arch.layer_count(); ++i) {
        const std::size_t in = arch.widths[i];
        const std::size_t out = arch.widths[i + 1];
        Layer layer;
        layer.weight = Matrix(in, out, std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(offset),
                                                           values.begin() + static_cast<std::ptrdiff_t>(offset + in * out)));
        offset += in * out;
        layer.bias.assign(values.begin() + static_cast<std::ptrdiff_t>(offset),
                          values.begin() + static_cast<std::ptrdiff_t>(offset + out));
        offset += out;
        layer.activation = arch.activations[i];
        layer.alpha = arch.leaky_alpha;
        model.layers.push_back(std::move(layer));
    }
    return model;
}

void assign_flat(Model& model, std::span<const double> values) {
    if (values.size() != model.parameter_count()) {
        throw InputError("assign_flat: length mismatch");
    }
    for_each_parameter_block(model, [&](std::span<double> block, std::size_t offset) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), block.size(), block.begin());
    });
}

std::vector<int> predict(const Model& model, const Matrix& batch) {
    const Matrix out = forward(model, batch);
    std::vector<int> labels(out.rows());
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        // max_element returns the first maximum, i.e. the lowest index on ties
        labels[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return labels;
}

}  // namespace flsim::nn
