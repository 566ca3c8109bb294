#define EIGEN_DONT_PARALLELIZE
#include "flsim/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <string>

#include <Eigen/Dense>
#include <omp.h>

namespace flsim::kernels {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

// Output tile edge for the parallel GEMM. Products below kSmallProduct flops run
// as a single tile.
constexpr std::size_t kTile = 256;
constexpr std::size_t kSmallProduct = std::size_t{1} << 18;
constexpr std::size_t kColumnChunk = 64;

struct Shape {
    std::size_t m;
    std::size_t n;
    std::size_t k;
};

Shape check_shapes(Trans ta, const ConstView& a, Trans tb, const ConstView& b, const MutView& c) {
    const std::size_t m = ta == Trans::yes ? a.cols : a.rows;
    const std::size_t ka = ta == Trans::yes ? a.rows : a.cols;
    const std::size_t kb = tb == Trans::yes ? b.cols : b.rows;
    const std::size_t n = tb == Trans::yes ? b.rows : b.cols;
    if (ka != kb || c.rows != m || c.cols != n) {
        throw ConfigError("gemm: dimension mismatch (" + std::to_string(m) + "x" + std::to_string(ka) +
                          " * " + std::to_string(kb) + "x" + std::to_string(n) + " -> " +
                          std::to_string(c.rows) + "x" + std::to_string(c.cols) + ")");
    }
    return {m, n, ka};
}

// Computes the C tile [r0, r0+rn) x [c0, c0+cn).
void gemm_tile(Trans ta, const ConstView& a, Trans tb, const ConstView& b, const MutView& c, std::size_t k,
               std::size_t r0, std::size_t rn, std::size_t c0, std::size_t cn, double alpha, double beta) {
    const auto ri = static_cast<Eigen::Index>(rn);
    const auto ci = static_cast<Eigen::Index>(cn);
    const auto ki = static_cast<Eigen::Index>(k);
    MutMap out(c.data + r0 * c.stride + c0, ri, ci, Eigen::OuterStride<>(static_cast<Eigen::Index>(c.stride)));

    auto run = [&](const auto& lhs, const auto& rhs) {
        if (beta == 0.0) {
            out.noalias() = alpha * (lhs * rhs);
        } else {
            out *= beta;
            out.noalias() += alpha * (lhs * rhs);
        }
    };
    const Eigen::OuterStride<> sa(static_cast<Eigen::Index>(a.stride));
    const Eigen::OuterStride<> sb(static_cast<Eigen::Index>(b.stride));
    if (ta == Trans::no && tb == Trans::no) {
        run(ConstMap(a.data + r0 * a.stride, ri, ki, sa), ConstMap(b.data + c0, ki, ci, sb));
    } else if (ta == Trans::no) {
        run(ConstMap(a.data + r0 * a.stride, ri, ki, sa), ConstMap(b.data + c0 * b.stride, ci, ki, sb).transpose());
    } else if (tb == Trans::no) {
        run(ConstMap(a.data + r0, ki, ri, sa).transpose(), ConstMap(b.data + c0, ki, ci, sb));
    } else {
        run(ConstMap(a.data + r0, ki, ri, sa).transpose(),
            ConstMap(b.data + c0 * b.stride, ci, ki, sb).transpose());
    }
}

}  // namespace

void gemm(Trans trans_a, ConstView a, Trans trans_b, ConstView b, MutView c, double alpha, double beta) {
    const Shape s = check_shapes(trans_a, a, trans_b, b, c);
    if (s.m == 0 || s.n == 0) {
        return;
    }
    if (s.m * s.n * std::max<std::size_t>(s.k, 1) <= kSmallProduct) {
        gemm_tile(trans_a, a, trans_b, b, c, s.k, 0, s.m, 0, s.n, alpha, beta);
        return;
    }
    // Tile along the longer output edge only.
    const bool by_rows = s.m >= s.n;
    const std::size_t extent = by_rows ? s.m : s.n;
    const auto tiles = static_cast<std::ptrdiff_t>((extent + kTile - 1) / kTile);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < tiles; ++t) {
        const std::size_t start = static_cast<std::size_t>(t) * kTile;
        const std::size_t len = std::min(kTile, extent - start);
        if (by_rows) {
            gemm_tile(trans_a, a, trans_b, b, c, s.k, start, len, 0, s.n, alpha, beta);
        } else {
            gemm_tile(trans_a, a, trans_b, b, c, s.k, 0, s.m, start, len, alpha, beta);
        }
    }
}

void gemm_serial(Trans trans_a, ConstView a, Trans trans_b, ConstView b, MutView c, double alpha, double beta) {
    const Shape s = check_shapes(trans_a, a, trans_b, b, c);
    auto at = [&](std::size_t i, std::size_t p) {
        return trans_a == Trans::yes ? a.data[p * a.stride + i] : a.data[i * a.stride + p];
    };
    auto bt = [&](std::size_t p, std::size_t j) {
        return trans_b == Trans::yes ? b.data[j * b.stride + p] : b.data[p * b.stride + j];
    };
    for (std::size_t i = 0; i < s.m; ++i) {
        for (std::size_t j = 0; j < s.n; ++j) {
            double sum = 0.0;
            for (std::size_t p = 0; p < s.k; ++p) {
                sum += at(i, p) * bt(p, j);
            }
            double& dst = c.data[i * c.stride + j];
            dst = beta == 0.0 ? alpha * sum : beta * dst + alpha * sum;
        }
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    gemm(Trans::no, a, Trans::no, b, c);
    return c;
}

namespace {

double sq_distance(const double* x, const double* y, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = x[j] - y[j];
        s += diff * diff;
    }
    return s;
}

}  // namespace

Matrix pairwise_sq_distances(const Matrix& x) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    Matrix out(n, n);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = sq_distance(x.data() + i * d, x.data() + j * d, d);
            out(i, j) = s;
            out(j, i) = s;
        }
    }
    return out;
}

Matrix pairwise_sq_distances_serial(const Matrix& x) {
    const std::size_t n = x.rows();
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = sq_distance(x.data() + i * x.cols(), x.data() + j * x.cols(), x.cols());
            out(i, j) = s;
            out(j, i) = s;
        }
    }
    return out;
}

namespace {

// Sums columns [c0, c1) in row order into out.
void column_sums(const Matrix& x, std::size_t c0, std::size_t c1, std::vector<double>& out) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double* row = x.data() + r * x.cols();
        for (std::size_t j = c0; j < c1; ++j) {
            out[j] += row[j];
        }
    }
}

void column_sq_dev(const Matrix& x, const std::vector<double>& mu, std::size_t c0, std::size_t c1,
                   std::vector<double>& out) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double* row = x.data() + r * x.cols();
        for (std::size_t j = c0; j < c1; ++j) {
            const double diff = row[j] - mu[j];
            out[j] += diff * diff;
        }
    }
}

template <typename Fn>
void for_column_chunks(std::size_t cols, Fn&& fn) {
    const auto chunks = static_cast<std::ptrdiff_t>((cols + kColumnChunk - 1) / kColumnChunk);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < chunks; ++t) {
        const std::size_t c0 = static_cast<std::size_t>(t) * kColumnChunk;
        fn(c0, std::min(cols, c0 + kColumnChunk));
    }
}

}  // namespace

std::vector<double> column_mean(const Matrix& x) {
    std::vector<double> out(x.cols(), 0.0);
    if (x.rows() == 0) {
        return out;
    }
    const double n = static_cast<double>(x.rows());
    for_column_chunks(x.cols(), [&](std::size_t c0, std::size_t c1) {
        column_sums(x, c0, c1, out);
        for (std::size_t j = c0; j < c1; ++j) {
            out[j] /= n;
        }
    });
    return out;
}

std::vector<double> column_mean_serial(const Matrix& x) {
    std::vector<double> out(x.cols(), 0.0);
    if (x.rows() == 0) {
        return out;
    }
    column_sums(x, 0, x.cols(), out);
    for (double& v : out) {
        v /= static_cast<double>(x.rows());
    }
    return out;
}

std::vector<double> column_variance(const Matrix& x) {
    const std::vector<double> mu = column_mean(x);
    std::vector<double> out(x.cols(), 0.0);
    if (x.rows() == 0) {
        return out;
    }
    const double n = static_cast<double>(x.rows());
    for_column_chunks(x.cols(), [&](std::size_t c0, std::size_t c1) {
        column_sq_dev(x, mu, c0, c1, out);
        for (std::size_t j = c0; j < c1; ++j) {
            out[j] /= n;
        }
    });
    return out;
}

std::vector<double> column_variance_serial(const Matrix& x) {
    const std::vector<double> mu = column_mean_serial(x);
    std::vector<double> out(x.cols(), 0.0);
    if (x.rows() == 0) {
        return out;
    }
    column_sq_dev(x, mu, 0, x.cols(), out);
    for (double& v : out) {
        v /= static_cast<double>(x.rows());
    }
    return out;
}

namespace {

double trimmed_column(const Matrix& x, std::size_t j, std::size_t m, std::vector<double>& scratch) {
    const std::size_t n = x.rows();
    scratch.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        scratch[r] = x(r, j);
    }
    std::sort(scratch.begin(), scratch.end());
    double sum = 0.0;
    for (std::size_t r = m; r < n - m; ++r) {
        sum += scratch[r];
    }
    return sum / static_cast<double>(n - 2 * m);
}

}  // namespace

std::vector<double> column_trimmed_mean(const Matrix& x, std::size_t m) {
    if (x.rows() <= 2 * m) {
        throw ConfigError("trimmed mean needs more than 2m rows");
    }
    std::vector<double> out(x.cols());
    for_column_chunks(x.cols(), [&](std::size_t c0, std::size_t c1) {
        std::vector<double> scratch;
        for (std::size_t j = c0; j < c1; ++j) {
            out[j] = trimmed_column(x, j, m, scratch);
        }
    });
    return out;
}

std::vector<double> column_trimmed_mean_serial(const Matrix& x, std::size_t m) {
    if (x.rows() <= 2 * m) {
        throw ConfigError("trimmed mean needs more than 2m rows");
    }
    std::vector<double> out(x.cols());
    std::vector<double> scratch;
    for (std::size_t j = 0; j < x.cols(); ++j) {
        out[j] = trimmed_column(x, j, m, scratch);
    }
    return out;
}

namespace {

inline void adam_element(double& w, double& m, double& v, double g, const AdamCoefficients& k) {
    m = k.beta1 * m + (1.0 - k.beta1) * g;
    v = k.beta2 * v + (1.0 - k.beta2) * g * g;
    const double m_hat = m / k.bias1;
    const double v_hat = v / k.bias2;
    w -= k.lr * m_hat / (std::sqrt(v_hat) + k.eps);
}

}  // namespace

void adam_update(std::span<double> params, std::span<double> m, std::span<double> v,
                 std::span<const double> grad, const AdamCoefficients& k) {
    const auto n = static_cast<std::ptrdiff_t>(params.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        adam_element(params[i], m[i], v[i], grad[i], k);
    }
}

void adam_update_serial(std::span<double> params, std::span<double> m, std::span<double> v,
                        std::span<const double> grad, const AdamCoefficients& k) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        adam_element(params[i], m[i], v[i], grad[i], k);
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void configure_threads() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (const char* env = std::getenv("FLSIM_THREADS")) {
            const int n = std::atoi(env);
            if (n > 0) {
                omp_set_num_threads(n);
            }
        }
    });
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace flsim::kernels
