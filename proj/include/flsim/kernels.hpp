#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "flsim/matrix.hpp"

// Data-parallel numeric kernels. Every kernel has an OpenMP version (used by the
// library) and a `_serial` reference kept for tests and benchmarks. Parallel
// versions partition work by problem shape only, never by thread count, so
// results are bit-identical for any FLSIM_THREADS value.
namespace flsim::kernels {

/// Row-major contiguous view. `stride` is the distance between row starts.
struct ConstView {
    const double* data;
    std::size_t rows;
    std::size_t cols;
    std::size_t stride;

    ConstView(const double* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c), stride(c) {}
    ConstView(const double* d, std::size_t r, std::size_t c, std::size_t s)
        : data(d), rows(r), cols(c), stride(s) {}
    ConstView(const Matrix& m) : ConstView(m.data(), m.rows(), m.cols()) {}  // NOLINT
};

struct MutView {
    double* data;
    std::size_t rows;
    std::size_t cols;
    std::size_t stride;

    MutView(double* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c), stride(c) {}
    MutView(double* d, std::size_t r, std::size_t c, std::size_t s) : data(d), rows(r), cols(c), stride(s) {}
    MutView(Matrix& m) : MutView(m.data(), m.rows(), m.cols()) {}  // NOLINT
};

enum class Trans { no, yes };

/// C = alpha * op(A) * op(B) + beta * C. Throws ConfigError on shape mismatch.
void gemm(Trans trans_a, ConstView a, Trans trans_b, ConstView b, MutView c, double alpha = 1.0,
          double beta = 0.0);
void gemm_serial(Trans trans_a, ConstView a, Trans trans_b, ConstView b, MutView c, double alpha = 1.0,
                 double beta = 0.0);

Matrix matmul(const Matrix& a, const Matrix& b);

/// out(i, j) = ||x_i - x_j||^2, symmetric with a zero diagonal.
Matrix pairwise_sq_distances(const Matrix& x);
Matrix pairwise_sq_distances_serial(const Matrix& x);

std::vector<double> column_mean(const Matrix& x);
std::vector<double> column_mean_serial(const Matrix& x);

/// Population variance, sum (x - mu)^2 / n.
std::vector<double> column_variance(const Matrix& x);
std::vector<double> column_variance_serial(const Matrix& x);

/// Per column: drop the m largest and m smallest entries, average the rest.
std::vector<double> column_trimmed_mean(const Matrix& x, std::size_t m);
std::vector<double> column_trimmed_mean_serial(const Matrix& x, std::size_t m);

struct AdamCoefficients {
    double lr;
    double beta1;
    double beta2;
    double eps;
    double bias1;  // 1 - beta1^t
    double bias2;  // 1 - beta2^t
};

/// One element-wise Adam update over parallel arrays of equal length.
void adam_update(std::span<double> params, std::span<double> m, std::span<double> v,
                 std::span<const double> grad, const AdamCoefficients& k);
void adam_update_serial(std::span<double> params, std::span<double> m, std::span<double> v,
                        std::span<const double> grad, const AdamCoefficients& k);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// Applies FLSIM_THREADS (if set) to the OpenMP runtime. Idempotent.
void configure_threads();
int max_threads();

}  // namespace flsim::kernels
