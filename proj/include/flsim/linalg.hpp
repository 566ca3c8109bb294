#pragma once

#include <cstddef>
#include <vector>

#include "flsim/matrix.hpp"
#include "flsim/rng.hpp"

namespace flsim::linalg {

struct SymmetricEigen {
    std::vector<double> values;  // descending
    Matrix vectors;              // column j is the unit eigenvector for values[j]
};

/// Cyclic Jacobi eigensolver for small symmetric matrices.
SymmetricEigen symmetric_eigen(const Matrix& sym, double tol = 1e-14, int max_sweeps = 100);

/// Leading right singular vector of x (unit norm) by power iteration on x^T x,
/// applied implicitly as x^T (x v). Returns a zero vector when x is zero.
std::vector<double> top_right_singular_vector(const Matrix& x, Rng& rng, int max_iters = 100,
                                              double tol = 1e-10);

}  // namespace flsim::linalg
