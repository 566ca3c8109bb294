#pragma once

#include <cstddef>
#include <utility>
#include <vector>

// Brute-force reference implementations. They are written directly from the
// definitions with nested loops over std::vector and share no code with the
// library, so tests and the `oracle` CLI subcommand can check the fast paths
// against them.
namespace flsim::oracle {

using Rows = std::vector<std::vector<double>>;

std::vector<double> mean(const Rows& rows);
std::vector<double> trimmed_mean(const Rows& rows, std::size_t m);

/// Krum score of every row: sum of squared distances to its max(n - M - 2, 1) nearest others.
std::vector<double> krum_scores(const Rows& rows, std::size_t m_assumed);

struct Selection {
    std::vector<std::size_t> selected;  // ascending
    std::vector<double> aggregate;
};

/// Repeated single-Krum picks on the shrinking set, `count` times.
std::vector<std::size_t> krum_pick(const Rows& rows, std::size_t m_assumed, std::size_t count);
Selection multi_krum(const Rows& rows, std::size_t m_assumed);
Selection bulyan(const Rows& rows, std::size_t m_assumed);

/// Single-linkage merge simulation down to two clusters. Each step scans all
/// cross-cluster point pairs for the smallest (distance, i, j).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> single_linkage_two(const Rows& points);

/// NT-Xent written term by term: rows (2i, 2i+1) are positives.
double nt_xent(const Rows& z, double tau);

/// Scores on the two principal axes of 2-D points from the closed-form 2x2
/// covariance eigensolve (descending eigenvalue, largest-magnitude loading positive).
Rows pca_2d(const Rows& points);

/// Dense forward pass with explicit loops. `weights[l]` is in x out.
struct DenseLayer {
    Rows weights;
    std::vector<double> bias;
    bool leaky = false;
    double alpha = 0.01;
};
Rows forward(const std::vector<DenseLayer>& layers, const Rows& inputs);

}  // namespace flsim::oracle
