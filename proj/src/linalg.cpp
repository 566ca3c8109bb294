#include "flsim/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flsim/kernels.hpp"

namespace flsim::linalg {

SymmetricEigen symmetric_eigen(const Matrix& sym, double tol, int max_sweeps) {
    const std::size_t n = sym.rows();
    if (sym.cols() != n) {
        throw ConfigError("symmetric_eigen: matrix is not square");
    }
    Matrix a = sym;
    Matrix v(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        v(i, i) = 1.0;
    }
    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                s += a(i, j) * a(i, j);
            }
        }
        return std::sqrt(s);
    };
    double scale = 0.0;
    for (double x : a.values()) {
        scale = std::max(scale, std::abs(x));
    }
    for (int sweep = 0; sweep < max_sweeps && off_norm() > tol * std::max(scale, 1e-300); ++sweep) {
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
    SymmetricEigen out{std::vector<double>(n), Matrix(n, n)};
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a(order[j], order[j]);
        for (std::size_t k = 0; k < n; ++k) {
            out.vectors(k, j) = v(k, order[j]);
        }
    }
    return out;
}

std::vector<double> top_right_singular_vector(const Matrix& x, Rng& rng, int max_iters, double tol) {
    const std::size_t d = x.cols();
    std::vector<double> v(d);
    for (double& e : v) {
        e = rng.normal();
    }
    double nv = kernels::norm(v);
    if (nv == 0.0 || d == 0) {
        return std::vector<double>(d, 0.0);
    }
    for (double& e : v) {
        e /= nv;
    }
    std::vector<double> xv(x.rows());
    std::vector<double> next(d);
    for (int it = 0; it < max_iters; ++it) {
        kernels::gemm(kernels::Trans::no, x, kernels::Trans::no, kernels::ConstView(v.data(), d, 1),
                      kernels::MutView(xv.data(), x.rows(), 1));
        kernels::gemm(kernels::Trans::yes, x, kernels::Trans::no, kernels::ConstView(xv.data(), x.rows(), 1),
                      kernels::MutView(next.data(), d, 1));
        const double n = kernels::norm(next);
        if (n == 0.0) {
            return std::vector<double>(d, 0.0);
        }
        double delta = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            next[j] /= n;
            delta += (next[j] - v[j]) * (next[j] - v[j]);
        }
        v.swap(next);
        if (std::sqrt(delta) < tol) {
            break;
        }
    }
    return v;
}

}  // namespace flsim::linalg
