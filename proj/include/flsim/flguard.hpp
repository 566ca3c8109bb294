#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "flsim/aggregator.hpp"
#include "flsim/matrix.hpp"
#include "flsim/nn.hpp"
#include "flsim/rng.hpp"

// Contrastive-ensemble filtering defense. Updates are reduced to a fixed working
// width by a low-variance selector and a random selector, MaxAbs-scaled, encoded
// by a contrastively trained encoder per branch, projected to two principal
// components and split into two single-linkage clusters; a client survives if
// both branches place it in the larger cluster.
namespace flsim::flguard {

inline constexpr std::size_t kDefaultWidth = 3072;

struct Hyper {
    double tau = 0.01;
    double noise_var = 0.01;
    double mask_ratio = 0.1;
    double lr = 0.001;
    std::size_t epochs = 5;
    std::size_t batch = 32;
    std::size_t pca_components = 2;
    std::size_t n_clusters = 2;
    std::size_t width = kDefaultWidth;
    double leaky_alpha = 0.01;
};

void validate(const Hyper& hyper);

enum class SelectorKind : std::uint8_t { low_variance = 0, random = 1 };

struct FeatureSelector {
    SelectorKind kind = SelectorKind::random;
    std::vector<std::size_t> indices;  // strictly increasing, < source_dim
    std::size_t source_dim = 0;

    Matrix apply(const Matrix& rows) const;
    friend bool operator==(const FeatureSelector&, const FeatureSelector&) = default;
};

/// The `width` columns of greatest population variance (lower index on ties), sorted.
FeatureSelector fit_low_variance_selector(const Matrix& g_train, std::size_t width = kDefaultWidth);
/// `width` distinct coordinates of [0, d) drawn uniformly, sorted. All of them when d <= width.
FeatureSelector fit_random_selector(std::size_t d, std::uint64_t seed, std::size_t width = kDefaultWidth);

/// Per-feature division by the fitted max |x|. Zero-max features map to 0; no clamping.
struct MaxAbsScaler {
    std::vector<double> max_abs;

    Matrix apply(const Matrix& rows) const;
    friend bool operator==(const MaxAbsScaler&, const MaxAbsScaler&) = default;
};

MaxAbsScaler fit_scaler(const Matrix& rows);

struct Scaler {
    MaxAbsScaler lv;
    MaxAbsScaler rd;
    friend bool operator==(const Scaler&, const Scaler&) = default;
};

/// Two views of a row. Each coordinate independently receives N(0, noise_var)
/// noise with probability mask_ratio.
std::pair<std::vector<double>, std::vector<double>> augment(std::span<const double> row, double noise_var,
                                                            double mask_ratio, Rng& rng);

struct PairCounts {
    std::size_t positive;
    std::size_t negative;
};

/// Positive / negative unordered pairs formed by a batch of B originals (2B views).
PairCounts nt_xent_pair_counts(std::size_t batch);

struct NtXent {
    double loss;
    Matrix grad;  // dL/dZ
};

/// NT-Xent over 2B rows where rows (2i, 2i+1) are positive pairs; cosine
/// similarity with temperature tau; averaged over all 2B anchors. B < 2 throws
/// DegenerateInputError.
double nt_xent(const Matrix& z, double tau);
NtXent nt_xent_with_grad(const Matrix& z, double tau);

/// Encoder (linear, leaky-ReLU, linear) followed by the projection head
/// (linear, leaky-ReLU, linear), all `width` wide.
nn::Architecture contrastive_architecture(std::size_t width, double leaky_alpha);
inline constexpr std::size_t kEncoderLayers = 2;

/// Trains encoder+head on preprocessed rows with NT-Xent and Adam; returns the
/// full four-layer model. `epoch_losses`, when given, receives the mean batch
/// loss of each epoch.
nn::Model train_contrastive_model(const Matrix& rows, const Hyper& hyper, Rng& rng,
                                  std::vector<double>* epoch_losses = nullptr);

/// Encoder output (projection head not applied).
Matrix encode(const nn::Model& model, const Matrix& rows);

/// Scores of the mean-centered rows on the leading principal directions,
/// descending variance; each direction's largest-magnitude loading is positive.
Matrix pca(const Matrix& h, std::size_t components);
inline Matrix pca2(const Matrix& h) { return pca(h, 2); }

struct Clusters {
    std::vector<std::size_t> a;  // contains the smallest index
    std::vector<std::size_t> b;
};

/// Euclidean single-linkage agglomeration down to two clusters. Merges follow
/// ascending (distance, i, j) over point pairs.
Clusters ahc_two_clusters(const Matrix& points);

/// Larger cluster; on equal size the one with the smaller mean intra-cluster
/// pairwise distance; then the one holding index 0.
std::vector<std::size_t> pick_benign(const Clusters& clusters, const Matrix& points);

struct FLGuardAssets {
    nn::Model model_lv;  // encoder layers only
    nn::Model model_rd;
    FeatureSelector selector_lv;
    FeatureSelector selector_rd;
    Scaler scaler;
    std::size_t trained_at_round = 0;

    friend bool operator==(const FLGuardAssets&, const FLGuardAssets&) = default;
};

struct TrainingLog {
    std::vector<double> epoch_loss_lv;
    std::vector<double> epoch_loss_rd;
};

/// Fits both selectors and the scaler on g_train and trains one encoder per branch.
FLGuardAssets train_contrastive(const Matrix& g_train, const Hyper& hyper, std::uint64_t seed, std::size_t round,
                                TrainingLog* log = nullptr);

/// Selector, scaler and encoder of one branch applied to raw updates.
Matrix preprocess_lv(const FLGuardAssets& assets, const Matrix& g);
Matrix preprocess_rd(const FLGuardAssets& assets, const Matrix& g);

struct FilterResult {
    std::vector<std::size_t> c_good;
    std::vector<std::size_t> c_lv;
    std::vector<std::size_t> c_rd;
    bool fallback_used = false;  // empty intersection replaced by c_lv
};

/// Clients kept by one branch: pick_benign(ahc(pca2(encode(...)))).
std::vector<std::size_t> benign_set(const nn::Model& encoder, const Matrix& preprocessed);

FilterResult filter_clients(const UpdateMatrix& g, const FLGuardAssets& assets);

/// Mean of the selected rows.
UpdateVector flguard_aggregate(const UpdateMatrix& g, const std::vector<std::size_t>& c_good);

/// Versioned little-endian binary encoding ("FLGA", version 1).
std::vector<std::uint8_t> serialize(const FLGuardAssets& assets);
FLGuardAssets deserialize(std::span<const std::uint8_t> blob);

/// The defense as a round-by-round aggregator. Keeps the last k rounds of
/// updates, retrains at rounds r with r mod k == 0 (before filtering that
/// round), and selects every client until the first training.
class FLGuard final : public Aggregator {
public:
    FLGuard(Hyper hyper, std::size_t interval_k, std::uint64_t seed);

    std::string name() const override { return "flguard"; }
    bool vector_wise() const override { return true; }
    void begin_round(const RoundContext& ctx) override { round_ = ctx.round; }
    AggregationResult probe(const UpdateMatrix& updates) const override;
    AggregationResult aggregate(const UpdateMatrix& updates) override;

    /// Snapshot of the current assets; null before the first training.
    std::shared_ptr<const FLGuardAssets> assets() const;
    /// Replaces the assets atomically.
    void install(std::shared_ptr<const FLGuardAssets> assets);

    std::size_t training_events() const noexcept { return training_events_; }
    std::size_t history_rows() const;
    const TrainingLog& last_training_log() const noexcept { return last_log_; }

private:
    AggregationResult filter_with(const UpdateMatrix& updates, const FLGuardAssets* assets) const;

    Hyper hyper_;
    std::size_t interval_k_;
    std::uint64_t seed_;
    std::size_t round_ = 0;
    std::deque<UpdateMatrix> history_;
    std::size_t training_events_ = 0;
    TrainingLog last_log_;
    mutable std::mutex assets_mutex_;
    std::shared_ptr<const FLGuardAssets> assets_;
};

}  // namespace flsim::flguard
