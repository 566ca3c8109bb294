#include "flsim/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "flsim/federation.hpp"
#include "flsim/kernels.hpp"
#include "flsim/linalg.hpp"

namespace flsim::defenses {

namespace {

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
}

}  // namespace

UpdateVector trimmed_mean(const UpdateMatrix& updates, std::size_t m) {
    if (updates.rows() <= 2 * m) {
        throw ConfigError("trimmed mean: N = " + std::to_string(updates.rows()) + " must exceed 2m = " +
                          std::to_string(2 * m));
    }
    return kernels::column_trimmed_mean(updates, m);
}

std::size_t multi_krum_count(std::size_t n, std::size_t m_assumed) {
    // N - c > 2M + 2  <=>  c <= N - 2M - 3
    if (n < 2 * m_assumed + 4) {
        throw ConfigError("multi-krum: N = " + std::to_string(n) + " is too small for M = " +
                          std::to_string(m_assumed) + " (need N >= 2M + 4)");
    }
    return n - 2 * m_assumed - 3;
}

std::vector<std::size_t> krum_select(const UpdateMatrix& updates, std::size_t m_assumed, std::size_t count) {
    const std::size_t n = updates.rows();
    if (count > n) {
        throw ConfigError("krum selection count exceeds the number of updates");
    }
    const Matrix dist = kernels::pairwise_sq_distances(updates);
    std::vector<std::size_t> remaining = all_rows(n);
    std::vector<std::size_t> selected;
    std::vector<double> neighbour;
    while (selected.size() < count) {
        const auto nr = static_cast<std::ptrdiff_t>(remaining.size());
        // at least one neighbour, so late Bulyan picks do not degenerate to index order
        const auto k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(nr - static_cast<std::ptrdiff_t>(m_assumed) - 2, 1));
        std::size_t best = 0;
        double best_score = 0.0;
        double best_spread = 0.0;
        for (std::size_t pos = 0; pos < remaining.size(); ++pos) {
            const std::size_t i = remaining[pos];
            neighbour.clear();
            double spread = 0.0;
            for (std::size_t j : remaining) {
                if (j != i) {
                    neighbour.push_back(dist(i, j));
                    spread += dist(i, j);
                }
            }
            const std::size_t take = std::min(k, neighbour.size());
            std::partial_sort(neighbour.begin(), neighbour.begin() + static_cast<std::ptrdiff_t>(take), neighbour.end());
            double score = 0.0;
            for (std::size_t t = 0; t < take; ++t) {
                score += neighbour[t];
            }
            // mutual nearest neighbours tie on score; the total distance to the
            // remaining set breaks that tie independently of row order
            if (pos == 0 || score < best_score || (score == best_score && spread < best_spread)) {
                best = pos;
                best_score = score;
                best_spread = spread;
            }
        }
        selected.push_back(remaining[best]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
    }
    std::sort(selected.begin(), selected.end());
    return selected;
}

AggregationResult multi_krum(const UpdateMatrix& updates, std::size_t m_assumed) {
    const std::size_t c = multi_krum_count(updates.rows(), m_assumed);
    AggregationResult out;
    out.selected = krum_select(updates, m_assumed, c);
    out.aggregate = mean_of_rows(updates, out.selected);
    return out;
}

AggregationResult bulyan(const UpdateMatrix& updates, std::size_t m_assumed) {
    const std::size_t n = updates.rows();
    if (n <= 4 * m_assumed) {
        throw ConfigError("bulyan: selection size N - 2M = " + std::to_string(n - std::min(n, 2 * m_assumed)) +
                          " must exceed 2M = " + std::to_string(2 * m_assumed));
    }
    const std::size_t theta = n - 2 * m_assumed;
    AggregationResult out;
    out.selected = krum_select(updates, m_assumed, theta);
    out.aggregate = trimmed_mean(updates.select_rows(out.selected), m_assumed);
    return out;
}

std::vector<double> dnc_outlier_scores(const Matrix& rows, Rng& rng) {
    Matrix centered = rows;
    const auto mu = kernels::column_mean(rows);
    for (std::size_t r = 0; r < centered.rows(); ++r) {
        auto row = centered.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] -= mu[j];
        }
    }
    const auto v = linalg::top_right_singular_vector(centered, rng);
    std::vector<double> scores(rows.rows());
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        const double p = kernels::dot(centered.row(r), v);
        scores[r] = p * p;
    }
    return scores;
}

AggregationResult dnc(const UpdateMatrix& updates, std::size_t m_assumed, const DncParams& params, Rng& rng) {
    const std::size_t n = updates.rows();
    const std::size_t d = updates.cols();
    if (!(params.e > 0.0)) {
        throw ConfigError("dnc: e must be > 0");
    }
    const auto removals =
        static_cast<std::size_t>(std::ceil(params.e * static_cast<double>(m_assumed) - 1e-9));
    if (removals >= n) {
        throw ConfigError("dnc: e*M = " + std::to_string(removals) + " removes every update (N = " +
                          std::to_string(n) + ")");
    }
    std::vector<bool> alive(n, true);
    const std::size_t subdim = std::min(params.subdim, d);
    for (std::size_t it = 0; it < std::max<std::size_t>(params.iters, 1); ++it) {
        auto coords = rng.sample_without_replacement(d, subdim);
        std::sort(coords.begin(), coords.end());
        const auto scores = dnc_outlier_scores(updates.select_cols(coords), rng);
        std::vector<std::size_t> order = all_rows(n);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        for (std::size_t t = 0; t < removals; ++t) {
            alive[order[t]] = false;
        }
    }
    AggregationResult out;
    for (std::size_t i = 0; i < n; ++i) {
        if (alive[i]) {
            out.selected.push_back(i);
        }
    }
    if (out.selected.empty()) {
        throw AggregationError("dnc: every update was removed");
    }
    out.aggregate = mean_of_rows(updates, out.selected);
    return out;
}

AggregationResult fltrust_combine(const UpdateMatrix& updates, std::span<const double> server_update) {
    if (server_update.size() != updates.cols()) {
        throw InputError("fltrust: server update dimension does not match client updates");
    }
    const double server_norm = kernels::norm(server_update);
    if (server_norm == 0.0) {
        throw DegenerateInputError("fltrust: server update has zero norm");
    }
    AggregationResult out;
    out.aggregate.assign(updates.cols(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < updates.rows(); ++i) {
        const auto g = updates.row(i);
        const double g_norm = kernels::norm(g);
        if (g_norm == 0.0) {
            continue;
        }
        const double trust = std::max(0.0, kernels::dot(g, server_update) / (g_norm * server_norm));
        if (trust <= 0.0) {
            continue;
        }
        out.selected.push_back(i);
        total += trust;
        const double w = trust * server_norm / g_norm;
        for (std::size_t j = 0; j < g.size(); ++j) {
            out.aggregate[j] += w * g[j];
        }
    }
    if (total > 0.0) {
        for (double& v : out.aggregate) {
            v /= total;
        }
    }
    return out;
}

AggregationResult TrimmedMean::probe(const UpdateMatrix& updates) const {
    return {trimmed_mean(updates, m_), all_rows(updates.rows()), false};
}

AggregationResult Dnc::probe(const UpdateMatrix& updates) const {
    Rng rng = Rng::derive(seed_, "dnc", {round_});
    return dnc(updates, m_assumed_, params_, rng);
}

FLTrust::FLTrust(data::Dataset root, FLTrustParams params, std::uint64_t seed)
    : root_(std::move(root)), params_(params), seed_(seed) {
    if (root_.empty()) {
        throw ConfigError("fltrust: root dataset is empty");
    }
}

void FLTrust::begin_round(const RoundContext& ctx) {
    if (ctx.global == nullptr) {
        throw ConfigError("fltrust: round context has no global model");
    }
    Rng rng = Rng::derive(seed_, "fltrust", {ctx.round});
    server_update_ = federation::local_update(*ctx.global, params_.local_iters, root_, params_.batch, params_.lr, rng);
}

AggregationResult FLTrust::probe(const UpdateMatrix& updates) const {
    return fltrust_combine(updates, server_update_);
}

}  // namespace flsim::defenses
