#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "flsim/matrix.hpp"
#include "flsim/nn.hpp"

namespace flsim {

struct RoundContext {
    std::size_t round = 0;  // 1-based FL round
    const nn::Model* global = nullptr;
};

/// What an aggregation rule did with one round's UpdateMatrix.
struct AggregationResult {
    UpdateVector aggregate;
    std::vector<std::size_t> selected;  // rows that contributed, ascending
    bool fallback_used = false;
};

/// Server-side aggregation rule. `probe` is a side-effect-free evaluation used by
/// attackers that know the rule; `aggregate` is the real per-round call and may
/// update internal state.
class Aggregator {
public:
    virtual ~Aggregator() = default;

    virtual std::string name() const = 0;
    /// True for rules that keep or drop whole client vectors.
    virtual bool vector_wise() const = 0;

    virtual void begin_round(const RoundContext& /*ctx*/) {}
    virtual AggregationResult probe(const UpdateMatrix& updates) const = 0;
    virtual AggregationResult aggregate(const UpdateMatrix& updates) { return probe(updates); }
};

/// Column-wise mean. Throws AggregationError on an empty matrix.
UpdateVector fed_avg(const UpdateMatrix& updates);

/// Mean of the given rows.
UpdateVector mean_of_rows(const UpdateMatrix& updates, const std::vector<std::size_t>& rows);

class FedAvg final : public Aggregator {
public:
    std::string name() const override { return "fedavg"; }
    bool vector_wise() const override { return false; }
    AggregationResult probe(const UpdateMatrix& updates) const override;
};

}  // namespace flsim
