#include "flsim/aggregator.hpp"

#include <numeric>

#include "flsim/kernels.hpp"

namespace flsim {

UpdateVector fed_avg(const UpdateMatrix& updates) {
    if (updates.rows() == 0) {
        throw AggregationError("fed_avg: no updates to aggregate");
    }
    return kernels::column_mean(updates);
}

UpdateVector mean_of_rows(const UpdateMatrix& updates, const std::vector<std::size_t>& rows) {
    if (rows.empty()) {
        throw AggregationError("mean of an empty row set");
    }
    return fed_avg(updates.select_rows(rows));
}

AggregationResult FedAvg::probe(const UpdateMatrix& updates) const {
    AggregationResult out{fed_avg(updates), std::vector<std::size_t>(updates.rows()), false};
    std::iota(out.selected.begin(), out.selected.end(), 0);
    return out;
}

}  // namespace flsim
