#include "flsim/flguard.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>

#include "flsim/error.hpp"
#include "flsim/kernels.hpp"
#include "flsim/linalg.hpp"

namespace flsim::flguard {

void validate(const Hyper& hyper) {
    if (!(hyper.tau > 0.0)) {
        throw ConfigError("flguard: tau must be positive");
    }
    if (!(hyper.mask_ratio >= 0.0 && hyper.mask_ratio <= 1.0)) {
        throw ConfigError("flguard: mask_ratio must lie in [0, 1]");
    }
    if (hyper.noise_var < 0.0) {
        throw ConfigError("flguard: noise_var must be non-negative");
    }
    if (!(hyper.lr > 0.0)) {
        throw ConfigError("flguard: lr must be positive");
    }
    if (hyper.batch < 2) {
        throw ConfigError("flguard: batch must be at least 2");
    }
    if (hyper.pca_components < 1 || hyper.width < hyper.pca_components) {
        throw ConfigError("flguard: width must be at least pca_components >= 1");
    }
    if (hyper.n_clusters != 2) {
        throw ConfigError("flguard: only two clusters are supported");
    }
    if (!(hyper.leaky_alpha > 0.0)) {
        throw ConfigError("flguard: leaky_alpha must be positive");
    }
}

// ---- preprocessing -------------------------------------------------------

Matrix FeatureSelector::apply(const Matrix& rows) const {
    if (rows.cols() != source_dim) {
        throw ConfigError("feature selector fitted on d = " + std::to_string(source_dim) + " applied to d = " +
                          std::to_string(rows.cols()));
    }
    return rows.select_cols(indices);
}

FeatureSelector fit_low_variance_selector(const Matrix& g_train, std::size_t width) {
    const std::size_t d = g_train.cols();
    if (d < 2) {
        throw ConfigError("low-variance selector: update dimension " + std::to_string(d) +
                          " is below the 2 PCA components");
    }
    if (g_train.rows() < 2) {
        throw InputError("low-variance selector needs at least 2 rows");
    }
    FeatureSelector sel;
    sel.kind = SelectorKind::low_variance;
    sel.source_dim = d;
    if (d <= width) {
        sel.indices.resize(d);
        std::iota(sel.indices.begin(), sel.indices.end(), 0);
        return sel;
    }
    const std::vector<double> var = kernels::column_variance(g_train);
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return var[a] > var[b]; });
    order.resize(width);
    std::sort(order.begin(), order.end());
    sel.indices = std::move(order);
    return sel;
}

FeatureSelector fit_random_selector(std::size_t d, std::uint64_t seed, std::size_t width) {
    if (d < 1) {
        throw InputError("random selector needs d >= 1");
    }
    FeatureSelector sel;
    sel.kind = SelectorKind::random;
    sel.source_dim = d;
    if (d <= width) {
        sel.indices.resize(d);
        std::iota(sel.indices.begin(), sel.indices.end(), 0);
        return sel;
    }
    Rng rng = Rng::derive(seed, "random-selector");
    sel.indices = rng.sample_without_replacement(d, width);
    std::sort(sel.indices.begin(), sel.indices.end());
    return sel;
}

MaxAbsScaler fit_scaler(const Matrix& rows) {
    if (rows.rows() < 1) {
        throw InputError("scaler needs at least one row");
    }
    MaxAbsScaler s;
    s.max_abs.assign(rows.cols(), 0.0);
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        auto row = rows.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            s.max_abs[c] = std::max(s.max_abs[c], std::abs(row[c]));
        }
    }
    return s;
}

Matrix MaxAbsScaler::apply(const Matrix& rows) const {
    if (rows.cols() != max_abs.size()) {
        throw ConfigError("scaler width mismatch");
    }
    Matrix out(rows.rows(), rows.cols());
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        auto src = rows.row(r);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) {
            dst[c] = max_abs[c] > 0.0 ? src[c] / max_abs[c] : 0.0;
        }
    }
    return out;
}

std::pair<std::vector<double>, std::vector<double>> augment(std::span<const double> row, double noise_var,
                                                            double mask_ratio, Rng& rng) {
    const double sd = std::sqrt(noise_var);
    auto view = [&] {
        std::vector<double> v(row.begin(), row.end());
        for (double& x : v) {
            if (rng.uniform() < mask_ratio) {
                x += sd * rng.normal();
            }
        }
        return v;
    };
    auto first = view();
    auto second = view();
    return {std::move(first), std::move(second)};
}

// ---- NT-Xent -------------------------------------------------------------

PairCounts nt_xent_pair_counts(std::size_t batch) {
    const std::size_t n = 2 * batch;
    PairCounts counts{0, 0};
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            if ((a ^ 1U) == b) {
                ++counts.positive;
            } else {
                ++counts.negative;
            }
        }
    }
    return counts;
}

namespace {

struct Normalized {
    Matrix u;
    std::vector<double> norms;
};

constexpr double kNormFloor = 1e-12;

Normalized normalize_rows(const Matrix& z) {
    Normalized out{Matrix(z.rows(), z.cols()), std::vector<double>(z.rows())};
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const double n = std::max(kernels::norm(z.row(r)), kNormFloor);
        out.norms[r] = n;
        auto src = z.row(r);
        auto dst = out.u.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) {
            dst[c] = src[c] / n;
        }
    }
    return out;
}

void check_pairs(const Matrix& z) {
    if (z.rows() % 2 != 0) {
        throw InputError("nt_xent: row count must be even (positive pairs are rows 2i, 2i+1)");
    }
    if (z.rows() < 4) {
        throw DegenerateInputError("nt_xent: B < 2 leaves no negative pairs");
    }
}

// Loss and, optionally, dL/dS for the similarity matrix S (modified in place to
// hold the gradient).
double loss_from_similarity(Matrix& s, bool want_grad) {
    const std::size_t n = s.rows();
    double total = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        auto row = s.row(a);
        const std::size_t p = a ^ 1U;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k) {
            if (k != a) {
                mx = std::max(mx, row[k]);
            }
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k != a) {
                sum += std::exp(row[k] - mx);
            }
        }
        const double lse = mx + std::log(sum);
        // grouped so that equal similarities give exactly log(n - 1)
        total += (mx - row[p]) + std::log(sum);
        if (want_grad) {
            for (std::size_t k = 0; k < n; ++k) {
                if (k == a) {
                    row[k] = 0.0;
                    continue;
                }
                double g = std::exp(row[k] - lse);
                if (k == p) {
                    g -= 1.0;
                }
                row[k] = g / static_cast<double>(n);
            }
        }
    }
    return total / static_cast<double>(n);
}

}  // namespace

double nt_xent(const Matrix& z, double tau) {
    check_pairs(z);
    const Normalized nz = normalize_rows(z);
    Matrix s(z.rows(), z.rows());
    kernels::gemm(kernels::Trans::no, nz.u, kernels::Trans::yes, nz.u, s, 1.0 / tau);
    return loss_from_similarity(s, false);
}

NtXent nt_xent_with_grad(const Matrix& z, double tau) {
    check_pairs(z);
    const std::size_t n = z.rows();
    const Normalized nz = normalize_rows(z);
    Matrix g(n, n);
    kernels::gemm(kernels::Trans::no, nz.u, kernels::Trans::yes, nz.u, g, 1.0 / tau);
    const double loss = loss_from_similarity(g, true);

    // S = U U^T / tau, so dU = (G + G^T) U / tau
    Matrix sym(n, n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t k = 0; k < n; ++k) {
            sym(a, k) = g(a, k) + g(k, a);
        }
    }
    Matrix du(n, z.cols());
    kernels::gemm(kernels::Trans::no, sym, kernels::Trans::no, nz.u, du, 1.0 / tau);

    Matrix dz(n, z.cols());
    for (std::size_t r = 0; r < n; ++r) {
        auto u = nz.u.row(r);
        auto d = du.row(r);
        const double proj = kernels::dot(u, d);
        auto out = dz.row(r);
        for (std::size_t c = 0; c < out.size(); ++c) {
            out[c] = (d[c] - u[c] * proj) / nz.norms[r];
        }
    }
    return {loss, std::move(dz)};
}

// ---- contrastive model ---------------------------------------------------

nn::Architecture contrastive_architecture(std::size_t width, double leaky_alpha) {
    nn::Architecture arch;
    arch.widths.assign(5, width);
    arch.leaky_alpha = leaky_alpha;
    // an activation applies to its layer's output: encoder linear -> leaky -> linear, head the same
    arch.activations = {nn::Activation::leaky_relu, nn::Activation::linear, nn::Activation::leaky_relu,
                        nn::Activation::linear};
    return arch;
}

nn::Model train_contrastive_model(const Matrix& rows, const Hyper& hyper, Rng& rng,
                                  std::vector<double>* epoch_losses) {
    validate(hyper);
    const std::size_t n = rows.rows();
    if (n < 2) {
        throw InputError("contrastive training needs at least 2 rows");
    }
    const std::size_t width = rows.cols();
    nn::Model model = nn::init_model(contrastive_architecture(width, hyper.leaky_alpha), rng);
    nn::AdamState adam = nn::AdamState::for_model(model, hyper.lr);
    std::vector<double> grad(model.parameter_count());
    const std::size_t batch = std::min(hyper.batch, n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    nn::ForwardCache cache;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start + 2 <= n; start += batch) {  // a 1-row tail is skipped
            const std::size_t b = std::min(batch, n - start);
            Matrix views(2 * b, width);
            for (std::size_t i = 0; i < b; ++i) {
                auto [v1, v2] = augment(rows.row(order[start + i]), hyper.noise_var, hyper.mask_ratio, rng);
                std::copy(v1.begin(), v1.end(), views.row(2 * i).begin());
                std::copy(v2.begin(), v2.end(), views.row(2 * i + 1).begin());
            }
            const Matrix z = nn::forward(model, views, cache);
            NtXent nx = nt_xent_with_grad(z, hyper.tau);
            nn::backward(model, cache, nx.grad, grad);
            nn::adam_step_inplace(adam, model, grad);
            loss_sum += nx.loss;
            ++batches;
        }
        if (epoch_losses != nullptr) {
            epoch_losses->push_back(batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0);
        }
    }
    return model;
}

Matrix encode(const nn::Model& model, const Matrix& rows) {
    if (model.layers.empty() || rows.cols() != model.input_dim()) {
        throw ConfigError("encode: input width " + std::to_string(rows.cols()) + " does not match the encoder");
    }
    return nn::forward_prefix(model, rows, std::min(kEncoderLayers, model.layers.size()));
}

// ---- PCA and clustering --------------------------------------------------

Matrix pca(const Matrix& h, std::size_t components) {
    const std::size_t n = h.rows();
    const std::size_t dim = h.cols();
    if (n < 2) {
        throw InputError("pca needs at least 2 rows");
    }
    Matrix c = h;
    const std::vector<double> mean = kernels::column_mean(h);
    for (std::size_t r = 0; r < n; ++r) {
        auto row = c.row(r);
        for (std::size_t j = 0; j < dim; ++j) {
            row[j] -= mean[j];
        }
    }

    // principal directions as rows of `dirs`
    Matrix dirs(components, dim);
    std::vector<double> values(components, 0.0);
    if (dim <= n) {
        Matrix cov(dim, dim);
        kernels::gemm(kernels::Trans::yes, c, kernels::Trans::no, c, cov);
        const linalg::SymmetricEigen eig = linalg::symmetric_eigen(cov);
        for (std::size_t j = 0; j < components && j < dim; ++j) {
            values[j] = eig.values[j];
            for (std::size_t i = 0; i < dim; ++i) {
                dirs(j, i) = eig.vectors(i, j);
            }
        }
    } else {
        // Gram trick: eigenvectors u of C C^T give directions C^T u
        Matrix gram(n, n);
        kernels::gemm(kernels::Trans::no, c, kernels::Trans::yes, c, gram);
        const linalg::SymmetricEigen eig = linalg::symmetric_eigen(gram);
        for (std::size_t j = 0; j < components && j < n; ++j) {
            values[j] = eig.values[j];
            auto dir = dirs.row(j);
            for (std::size_t r = 0; r < n; ++r) {
                const double w = eig.vectors(r, j);
                auto row = c.row(r);
                for (std::size_t i = 0; i < dim; ++i) {
                    dir[i] += w * row[i];
                }
            }
            const double len = kernels::norm(dir);
            if (len > 0.0) {
                for (double& x : dir) {
                    x /= len;
                }
            }
        }
    }

    const double top = std::max(values[0], 0.0);
    for (std::size_t j = 0; j < components; ++j) {
        auto dir = dirs.row(j);
        if (!(values[j] > 1e-12 * top) || top == 0.0) {
            std::fill(dir.begin(), dir.end(), 0.0);
            continue;
        }
        std::size_t arg = 0;
        for (std::size_t i = 1; i < dim; ++i) {
            if (std::abs(dir[i]) > std::abs(dir[arg])) {
                arg = i;
            }
        }
        if (dir[arg] < 0.0) {
            for (double& x : dir) {
                x = -x;
            }
        }
    }

    Matrix scores(n, components);
    kernels::gemm(kernels::Trans::no, c, kernels::Trans::yes, dirs, scores);
    return scores;
}

namespace {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) {
            return false;
        }
        if (b < a) {
            std::swap(a, b);
        }
        parent_[b] = a;
        return true;
    }

private:
    std::vector<std::size_t> parent_;
};

double mean_intra_distance(const std::vector<std::size_t>& members, const Matrix& points) {
    if (members.size() < 2) {
        return 0.0;
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t x = 0; x < members.size(); ++x) {
        for (std::size_t y = x + 1; y < members.size(); ++y) {
            double sq = 0.0;
            auto a = points.row(members[x]);
            auto b = points.row(members[y]);
            for (std::size_t c = 0; c < a.size(); ++c) {
                sq += (a[c] - b[c]) * (a[c] - b[c]);
            }
            sum += std::sqrt(sq);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

}  // namespace

Clusters ahc_two_clusters(const Matrix& points) {
    const std::size_t n = points.rows();
    if (n < 2) {
        throw InputError("ahc needs at least 2 points");
    }
    struct Edge {
        double dist;
        std::size_t i;
        std::size_t j;
    };
    const Matrix sq = kernels::pairwise_sq_distances(points);
    std::vector<Edge> edges;
    edges.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            edges.push_back({std::sqrt(sq(i, j)), i, j});
        }
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
        return std::tie(a.dist, a.i, a.j) < std::tie(b.dist, b.i, b.j);
    });
    // Kruskal order is exactly the single-linkage merge order
    DisjointSets sets(n);
    std::size_t clusters = n;
    for (const Edge& e : edges) {
        if (clusters == 2) {
            break;
        }
        if (sets.unite(e.i, e.j)) {
            --clusters;
        }
    }
    Clusters out;
    const std::size_t root0 = sets.find(0);
    for (std::size_t i = 0; i < n; ++i) {
        (sets.find(i) == root0 ? out.a : out.b).push_back(i);
    }
    return out;
}

std::vector<std::size_t> pick_benign(const Clusters& clusters, const Matrix& points) {
    if (clusters.a.size() != clusters.b.size()) {
        return clusters.a.size() > clusters.b.size() ? clusters.a : clusters.b;
    }
    const double da = mean_intra_distance(clusters.a, points);
    const double db = mean_intra_distance(clusters.b, points);
    if (da != db) {
        return da < db ? clusters.a : clusters.b;
    }
    const bool a_has_zero = std::find(clusters.a.begin(), clusters.a.end(), 0) != clusters.a.end();
    return a_has_zero ? clusters.a : clusters.b;
}

// ---- training and filtering ----------------------------------------------

FLGuardAssets train_contrastive(const Matrix& g_train, const Hyper& hyper, std::uint64_t seed, std::size_t round,
                                TrainingLog* log) {
    validate(hyper);
    const std::size_t d = g_train.cols();
    if (d < hyper.pca_components) {
        throw ConfigError("flguard: update dimension " + std::to_string(d) + " is below pca_components");
    }
    const std::size_t width = std::min(d, hyper.width);
    FLGuardAssets assets;
    assets.trained_at_round = round;
    assets.selector_lv = fit_low_variance_selector(g_train, width);
    assets.selector_rd = fit_random_selector(d, Rng::derive(seed, "rd-selector", {round}).next(), width);
    const Matrix lv = assets.selector_lv.apply(g_train);
    const Matrix rd = assets.selector_rd.apply(g_train);
    assets.scaler.lv = fit_scaler(lv);
    assets.scaler.rd = fit_scaler(rd);

    auto train_branch = [&](const Matrix& selected, const MaxAbsScaler& scaler, std::string_view stream,
                            std::vector<double>* losses) {
        Rng rng = Rng::derive(seed, stream, {round});
        nn::Model full = train_contrastive_model(scaler.apply(selected), hyper, rng, losses);
        full.layers.resize(kEncoderLayers);  // the projection head is discarded
        return full;
    };
    assets.model_lv = train_branch(lv, assets.scaler.lv, "contrastive-lv", log ? &log->epoch_loss_lv : nullptr);
    assets.model_rd = train_branch(rd, assets.scaler.rd, "contrastive-rd", log ? &log->epoch_loss_rd : nullptr);
    return assets;
}

Matrix preprocess_lv(const FLGuardAssets& assets, const Matrix& g) {
    return assets.scaler.lv.apply(assets.selector_lv.apply(g));
}

Matrix preprocess_rd(const FLGuardAssets& assets, const Matrix& g) {
    return assets.scaler.rd.apply(assets.selector_rd.apply(g));
}

std::vector<std::size_t> benign_set(const nn::Model& encoder, const Matrix& preprocessed) {
    if (preprocessed.rows() < 2) {
        std::vector<std::size_t> all(preprocessed.rows());
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    const Matrix points = pca2(encode(encoder, preprocessed));
    return pick_benign(ahc_two_clusters(points), points);
}

FilterResult filter_clients(const UpdateMatrix& g, const FLGuardAssets& assets) {
    FilterResult res;
    res.c_lv = benign_set(assets.model_lv, preprocess_lv(assets, g));
    res.c_rd = benign_set(assets.model_rd, preprocess_rd(assets, g));
    std::set_intersection(res.c_lv.begin(), res.c_lv.end(), res.c_rd.begin(), res.c_rd.end(),
                          std::back_inserter(res.c_good));
    if (res.c_good.empty()) {
        res.c_good = res.c_lv;
        res.fallback_used = true;
    }
    return res;
}

UpdateVector flguard_aggregate(const UpdateMatrix& g, const std::vector<std::size_t>& c_good) {
    return mean_of_rows(g, c_good);
}

// ---- serialization -------------------------------------------------------

namespace {

constexpr std::uint32_t kBlobVersion = 1;
constexpr char kMagic[4] = {'F', 'L', 'G', 'A'};

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f64s(std::span<const double> vs) {
        u64(vs.size());
        for (double v : vs) {
            f64(v);
        }
    }
    void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::uint8_t u8() {
        need(1);
        return in_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
        }
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
        }
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::vector<double> f64s() {
        const std::uint64_t n = u64();
        if (n > (in_.size() - pos_) / 8) {
            throw IngestError("assets blob: array length exceeds the remaining data", pos_);
        }
        std::vector<double> v(n);
        for (double& x : v) {
            x = f64();
        }
        return v;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) {
            throw IngestError("assets blob truncated", in_.size());
        }
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

void write_selector(Writer& w, const FeatureSelector& s) {
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u64(s.source_dim);
    w.u64(s.indices.size());
    for (std::size_t i : s.indices) {
        w.u64(i);
    }
}

FeatureSelector read_selector(Reader& r) {
    FeatureSelector s;
    const std::size_t at = r.pos();
    const std::uint8_t kind = r.u8();
    if (kind > 1) {
        throw IngestError("assets blob: unknown selector kind", at);
    }
    s.kind = static_cast<SelectorKind>(kind);
    s.source_dim = r.u64();
    const std::uint64_t n = r.u64();
    if (n > s.source_dim) {
        throw IngestError("assets blob: selector longer than its source dimension", r.pos());
    }
    s.indices.resize(n);
    for (auto& i : s.indices) {
        i = r.u64();
        if (i >= s.source_dim) {
            throw IngestError("assets blob: selector index out of range", r.pos() - 8);
        }
    }
    return s;
}

void write_model(Writer& w, const nn::Model& m) {
    w.u64(m.layers.size());
    for (const auto& layer : m.layers) {
        w.u64(layer.in());
        w.u64(layer.out());
        w.u8(static_cast<std::uint8_t>(layer.activation));
        w.f64(layer.alpha);
        w.f64s(layer.weight.values());
        w.f64s(layer.bias);
    }
}

nn::Model read_model(Reader& r) {
    nn::Model m;
    const std::uint64_t n_layers = r.u64();
    if (n_layers > 64) {
        throw IngestError("assets blob: implausible layer count", r.pos() - 8);
    }
    for (std::uint64_t l = 0; l < n_layers; ++l) {
        nn::Layer layer;
        const std::uint64_t in = r.u64();
        const std::uint64_t out = r.u64();
        const std::size_t at = r.pos();
        const std::uint8_t act = r.u8();
        if (act > 2) {
            throw IngestError("assets blob: unknown activation", at);
        }
        layer.activation = static_cast<nn::Activation>(act);
        layer.alpha = r.f64();
        std::vector<double> w = r.f64s();
        if (w.size() != in * out) {
            throw IngestError("assets blob: weight size mismatch", r.pos());
        }
        layer.weight = Matrix(in, out, std::move(w));
        layer.bias = r.f64s();
        if (layer.bias.size() != out) {
            throw IngestError("assets blob: bias size mismatch", r.pos());
        }
        m.layers.push_back(std::move(layer));
    }
    return m;
}

}  // namespace

std::vector<std::uint8_t> serialize(const FLGuardAssets& assets) {
    Writer w;
    w.raw(kMagic, 4);
    w.u32(kBlobVersion);
    w.u64(assets.trained_at_round);
    write_selector(w, assets.selector_lv);
    write_selector(w, assets.selector_rd);
    w.f64s(assets.scaler.lv.max_abs);
    w.f64s(assets.scaler.rd.max_abs);
    write_model(w, assets.model_lv);
    write_model(w, assets.model_rd);
    return w.take();
}

FLGuardAssets deserialize(std::span<const std::uint8_t> blob) {
    if (blob.size() < 4 || std::memcmp(blob.data(), kMagic, 4) != 0) {
        throw IngestError("not an FLGuard assets blob (bad magic)", 0);
    }
    Reader r(blob.subspan(4));
    const std::uint32_t version = r.u32();
    if (version != kBlobVersion) {
        throw IngestError("unsupported assets blob version " + std::to_string(version), 4);
    }
    FLGuardAssets a;
    a.trained_at_round = r.u64();
    a.selector_lv = read_selector(r);
    a.selector_rd = read_selector(r);
    a.scaler.lv.max_abs = r.f64s();
    a.scaler.rd.max_abs = r.f64s();
    a.model_lv = read_model(r);
    a.model_rd = read_model(r);
    if (!r.done()) {
        throw IngestError("assets blob has trailing bytes", r.pos() + 4);
    }
    if (a.scaler.lv.max_abs.size() != a.selector_lv.indices.size() ||
        a.scaler.rd.max_abs.size() != a.selector_rd.indices.size()) {
        throw IngestError("assets blob: scaler and selector widths differ", 0);
    }
    return a;
}

// ---- aggregator ----------------------------------------------------------

FLGuard::FLGuard(Hyper hyper, std::size_t interval_k, std::uint64_t seed)
    : hyper_(hyper), interval_k_(interval_k), seed_(seed) {
    validate(hyper_);
    if (interval_k_ < 1) {
        throw ConfigError("flguard: training interval k must be at least 1");
    }
}

std::shared_ptr<const FLGuardAssets> FLGuard::assets() const {
    std::lock_guard lock(assets_mutex_);
    return assets_;
}

void FLGuard::install(std::shared_ptr<const FLGuardAssets> assets) {
    std::lock_guard lock(assets_mutex_);
    assets_ = std::move(assets);
}

std::size_t FLGuard::history_rows() const {
    std::size_t rows = 0;
    for (const auto& g : history_) {
        rows += g.rows();
    }
    return rows;
}

AggregationResult FLGuard::filter_with(const UpdateMatrix& updates, const FLGuardAssets* assets) const {
    AggregationResult res;
    if (assets == nullptr) {
        res.selected.resize(updates.rows());
        std::iota(res.selected.begin(), res.selected.end(), 0);
        res.aggregate = fed_avg(updates);
        return res;
    }
    FilterResult f = filter_clients(updates, *assets);
    res.aggregate = flguard_aggregate(updates, f.c_good);
    res.selected = std::move(f.c_good);
    res.fallback_used = f.fallback_used;
    return res;
}

AggregationResult FLGuard::probe(const UpdateMatrix& updates) const {
    const auto snapshot = assets();
    return filter_with(updates, snapshot.get());
}

AggregationResult FLGuard::aggregate(const UpdateMatrix& updates) {
    history_.push_back(updates);
    while (history_.size() > interval_k_) {
        history_.pop_front();
    }
    if (round_ > 0 && round_ % interval_k_ == 0) {
        Matrix g_train;
        for (const auto& g : history_) {
            for (std::size_t r = 0; r < g.rows(); ++r) {
                g_train.push_row(g.row(r));
            }
        }
        TrainingLog log;
        auto trained = std::make_shared<const FLGuardAssets>(train_contrastive(g_train, hyper_, seed_, round_, &log));
        install(std::move(trained));
        last_log_ = std::move(log);
        ++training_events_;
    }
    return probe(updates);
}

}  // namespace flsim::flguard
