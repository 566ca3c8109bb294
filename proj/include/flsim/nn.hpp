#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "flsim/matrix.hpp"
#include "flsim/rng.hpp"

// Minimal dense network engine: forward, reverse-mode gradients, SGD and Adam.
// Parameters flatten in layer order, each layer as weight (row-major in x out)
// followed by bias.
namespace flsim::nn {

enum class Activation { linear, leaky_relu, softmax_out };

struct Layer {
    Matrix weight;              // in x out
    std::vector<double> bias;   // out
    Activation activation = Activation::linear;
    double alpha = 0.01;        // leaky-ReLU slope for negative inputs

    std::size_t in() const noexcept { return weight.rows(); }
    std::size_t out() const noexcept { return weight.cols(); }
    std::size_t parameter_count() const noexcept { return weight.size() + bias.size(); }

    friend bool operator==(const Layer&, const Layer&) = default;
};

struct Architecture {
    std::vector<std::size_t> widths;      // input, hidden..., output
    std::vector<Activation> activations;  // one per layer (widths.size() - 1)
    double leaky_alpha = 0.01;

    /// Leaky-ReLU hidden layers and a linear (logit) output layer.
    static Architecture mlp(std::vector<std::size_t> widths, double leaky_alpha = 0.01);

    std::size_t parameter_count() const;
    std::size_t layer_count() const noexcept { return activations.size(); }

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct Model {
    std::vector<Layer> layers;

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::size_t parameter_count() const;
    Architecture architecture() const;

    friend bool operator==(const Model&, const Model&) = default;
};

/// Checks layer chaining and alpha > 0; throws ConfigError.
void validate(const Architecture& arch);
void validate(const Model& model);

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
Model init_model(const Architecture& arch, Rng& rng);

struct ForwardCache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
    Matrix output;
};

Matrix forward(const Model& model, const Matrix& batch);
Matrix forward(const Model& model, const Matrix& batch, ForwardCache& cache);
/// Runs only the first `n_layers` layers.
Matrix forward_prefix(const Model& model, const Matrix& batch, std::size_t n_layers);

double leaky_relu(double x, double alpha) noexcept;
/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

/// Gradient of a scalar loss given dL/d(output). `grad` (length d) is overwritten.
void backward(const Model& model, const ForwardCache& cache, const Matrix& d_output, std::span<double> grad);

struct LossAndGradient {
    double loss;
    UpdateVector grad;
};

/// Mean softmax cross-entropy over the batch. The last layer's pre-activation is
/// treated as logits for both linear and softmax_out outputs.
LossAndGradient backward_cross_entropy(const Model& model, const Matrix& batch, std::span<const int> labels);
double cross_entropy_loss(const Model& model, const Matrix& batch, std::span<const int> labels);

/// params - lr * grad in flat space.
Model sgd_step(Model params, std::span<const double> grad, double lr);
void sgd_step_inplace(Model& params, std::span<const double> grad, double lr);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr = 0.001;

    static AdamState for_model(const Model& model, double lr);
};

/// Bias-corrected Adam update, in place. Increments state.t.
void adam_step_inplace(AdamState& state, Model& params, std::span<const double> grad);
std::pair<Model, AdamState> adam_step(AdamState state, Model params, std::span<const double> grad);

UpdateVector flatten(const Model& model);
Model unflatten(std::span<const double> values, const Architecture& arch);
/// Copies flat values into an existing model of matching size.
void assign_flat(Model& model, std::span<const double> values);

/// Argmax per row; ties resolve to the lowest index.
std::vector<int> predict(const Model& model, const Matrix& batch);

}  // namespace flsim::nn
