#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flsim/aggregator.hpp"
#include "flsim/data.hpp"
#include "flsim/rng.hpp"

// Baseline byzantine-robust aggregation rules.
namespace flsim::defenses {

/// Per column, the mean after dropping the m largest and m smallest values.
/// Requires N > 2m.
UpdateVector trimmed_mean(const UpdateMatrix& updates, std::size_t m);

/// Largest c with N - c > 2M + 2. Throws ConfigError when no such c >= 1 exists.
std::size_t multi_krum_count(std::size_t n, std::size_t m_assumed);

/// Greedy Krum selection of `count` rows. Each step scores the remaining rows by
/// the sum of squared distances to their max(remaining - M - 2, 1) nearest remaining
/// neighbours and moves the lowest score (lowest index on ties) to the selected
/// set. Returns the selected rows in ascending order.
std::vector<std::size_t> krum_select(const UpdateMatrix& updates, std::size_t m_assumed, std::size_t count);

AggregationResult multi_krum(const UpdateMatrix& updates, std::size_t m_assumed);

/// Krum-selects N - 2M rows, then takes their trimmed mean with m = M.
AggregationResult bulyan(const UpdateMatrix& updates, std::size_t m_assumed);

struct DncParams {
    double e = 1.5;
    std::size_t iters = 1;
    std::size_t subdim = 3072;
};

/// Squared projection of each centered row onto the top right singular vector.
std::vector<double> dnc_outlier_scores(const Matrix& rows, Rng& rng);

/// Divide-and-conquer: every iteration removes the ceil(e*M) rows with the
/// highest outlier score on a random coordinate subset; survivors of all
/// iterations are averaged.
AggregationResult dnc(const UpdateMatrix& updates, std::size_t m_assumed, const DncParams& params, Rng& rng);

/// Trust-score weighting against a server update g0: TS_i = max(0, cos(g_i, g0)),
/// each g_i rescaled to ||g0||, output = sum TS_i g_i' / sum TS_i (zero when all
/// scores vanish). Selected rows are those with TS > 0.
AggregationResult fltrust_combine(const UpdateMatrix& updates, std::span<const double> server_update);

class TrimmedMean final : public Aggregator {
public:
    explicit TrimmedMean(std::size_t m) : m_(m) {}
    std::string name() const override { return "trimmed_mean"; }
    bool vector_wise() const override { return false; }
    AggregationResult probe(const UpdateMatrix& updates) const override;

private:
    std::size_t m_;
};

class MultiKrum final : public Aggregator {
public:
    explicit MultiKrum(std::size_t m_assumed) : m_assumed_(m_assumed) {}
    std::string name() const override { return "multi_krum"; }
    bool vector_wise() const override { return true; }
    AggregationResult probe(const UpdateMatrix& updates) const override { return multi_krum(updates, m_assumed_); }

private:
    std::size_t m_assumed_;
};

class Bulyan final : public Aggregator {
public:
    explicit Bulyan(std::size_t m_assumed) : m_assumed_(m_assumed) {}
    std::string name() const override { return "bulyan"; }
    bool vector_wise() const override { return true; }
    AggregationResult probe(const UpdateMatrix& updates) const override { return bulyan(updates, m_assumed_); }

private:
    std::size_t m_assumed_;
};

class Dnc final : public Aggregator {
public:
    Dnc(std::size_t m_assumed, DncParams params, std::uint64_t seed)
        : m_assumed_(m_assumed), params_(params), seed_(seed) {}
    std::string name() const override { return "dnc"; }
    bool vector_wise() const override { return true; }
    void begin_round(const RoundContext& ctx) override { round_ = ctx.round; }
    /// Uses the same per-round random stream as aggregate().
    AggregationResult probe(const UpdateMatrix& updates) const override;

private:
    std::size_t m_assumed_;
    DncParams params_;
    std::uint64_t seed_;
    std::size_t round_ = 0;
};

struct FLTrustParams {
    std::size_t local_iters = 1;
    std::size_t batch = 32;
    double lr = 0.01;
};

class FLTrust final : public Aggregator {
public:
    FLTrust(data::Dataset root, FLTrustParams params, std::uint64_t seed);
    std::string name() const override { return "fltrust"; }
    bool vector_wise() const override { return true; }
    /// Computes the server update on the root dataset for this round.
    void begin_round(const RoundContext& ctx) override;
    AggregationResult probe(const UpdateMatrix& updates) const override;

    const UpdateVector& server_update() const noexcept { return server_update_; }

private:
    data::Dataset root_;
    FLTrustParams params_;
    std::uint64_t seed_;
    UpdateVector server_update_;
};

}  // namespace flsim::defenses
