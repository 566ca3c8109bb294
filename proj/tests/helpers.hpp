#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "flsim/matrix.hpp"
#include "flsim/nn.hpp"
#include "flsim/oracle.hpp"
#include "flsim/rng.hpp"

namespace testing {

inline flsim::Matrix random_matrix(std::size_t rows, std::size_t cols, flsim::Rng& rng, double lo = -1.0,
                                   double hi = 1.0) {
    flsim::Matrix m(rows, cols);
    for (double& x : m.values()) {
        x = rng.uniform(lo, hi);
    }
    return m;
}

inline flsim::oracle::Rows to_rows(const flsim::Matrix& m) {
    flsim::oracle::Rows out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out[r].assign(m.row(r).begin(), m.row(r).end());
    }
    return out;
}

inline std::vector<flsim::oracle::DenseLayer> to_dense(const flsim::nn::Model& model) {
    std::vector<flsim::oracle::DenseLayer> out;
    for (const auto& layer : model.layers) {
        out.push_back({to_rows(layer.weight), layer.bias, layer.activation == flsim::nn::Activation::leaky_relu,
                       layer.alpha});
    }
    return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return a.size() == b.size() ? m : INFINITY;
}

/// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testing
