// Parallel kernels against their serial references. Thread count follows
// FLSIM_THREADS (or OMP_NUM_THREADS).

#include <benchmark/benchmark.h>

#include "flsim/flguard.hpp"
#include "flsim/kernels.hpp"
#include "flsim/rng.hpp"

using namespace flsim;

namespace {

Matrix filled(std::size_t r, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(r, c);
    for (double& x : m.values()) {
        x = rng.uniform(-1, 1);
    }
    return m;
}

template <bool Serial>
void BM_gemm(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    const Matrix a = filled(n, n, 1), b = filled(n, n, 2);
    Matrix c(n, n);
    for (auto _ : st) {
        if constexpr (Serial) {
            kernels::gemm_serial(kernels::Trans::no, a, kernels::Trans::no, b, c);
        } else {
            kernels::gemm(kernels::Trans::no, a, kernels::Trans::no, b, c);
        }
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Serial>
void BM_pairwise(benchmark::State& st) {
    const Matrix x = filled(static_cast<std::size_t>(st.range(0)), 3072, 3);
    for (auto _ : st) {
        benchmark::DoNotOptimize(Serial ? kernels::pairwise_sq_distances_serial(x) : kernels::pairwise_sq_distances(x));
    }
}

template <bool Serial>
void BM_column_mean(benchmark::State& st) {
    const Matrix x = filled(static_cast<std::size_t>(st.range(0)), 101770, 4);
    for (auto _ : st) {
        benchmark::DoNotOptimize(Serial ? kernels::column_mean_serial(x) : kernels::column_mean(x));
    }
}

template <bool Serial>
void BM_column_variance(benchmark::State& st) {
    const Matrix x = filled(static_cast<std::size_t>(st.range(0)), 101770, 5);
    for (auto _ : st) {
        benchmark::DoNotOptimize(Serial ? kernels::column_variance_serial(x) : kernels::column_variance(x));
    }
}

template <bool Serial>
void BM_trimmed_mean(benchmark::State& st) {
    const Matrix x = filled(static_cast<std::size_t>(st.range(0)), 101770, 6);
    for (auto _ : st) {
        benchmark::DoNotOptimize(Serial ? kernels::column_trimmed_mean_serial(x, 4) : kernels::column_trimmed_mean(x, 4));
    }
}

template <bool Serial>
void BM_adam(benchmark::State& st) {
    const auto n = static_cast<std::size_t>(st.range(0));
    std::vector<double> p(n, 0.1), m(n), v(n), g(n, 0.01);
    const kernels::AdamCoefficients k{0.001, 0.9, 0.999, 1e-8, 0.1, 0.001};
    for (auto _ : st) {
        if constexpr (Serial) {
            kernels::adam_update_serial(p, m, v, g, k);
        } else {
            kernels::adam_update(p, m, v, g, k);
        }
        benchmark::DoNotOptimize(p.data());
    }
}

void BM_filter_clients(benchmark::State& st) {
    const Matrix history = filled(100, 3072, 7);
    flguard::Hyper hyper;
    hyper.epochs = 1;
    const auto assets = flguard::train_contrastive(history, hyper, 1, 5);
    const Matrix round = filled(20, 3072, 8);
    for (auto _ : st) {
        benchmark::DoNotOptimize(flguard::filter_clients(round, assets));
    }
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Arg(128)->Arg(512);
BENCHMARK(BM_gemm<true>)->Arg(128)->Arg(512);
BENCHMARK(BM_pairwise<false>)->Arg(20)->Arg(100);
BENCHMARK(BM_pairwise<true>)->Arg(20)->Arg(100);
BENCHMARK(BM_column_mean<false>)->Arg(20);
BENCHMARK(BM_column_mean<true>)->Arg(20);
BENCHMARK(BM_column_variance<false>)->Arg(20);
BENCHMARK(BM_column_variance<true>)->Arg(20);
BENCHMARK(BM_trimmed_mean<false>)->Arg(20);
BENCHMARK(BM_trimmed_mean<true>)->Arg(20);
BENCHMARK(BM_adam<false>)->Arg(101770);
BENCHMARK(BM_adam<true>)->Arg(101770);
BENCHMARK(BM_filter_clients)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
    kernels::configure_threads();
    benchmark::Initialize(&argc, argv);
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
