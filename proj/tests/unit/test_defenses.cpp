#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "flsim/aggregator.hpp"
#include "flsim/defenses.hpp"
#include "flsim/error.hpp"
#include "helpers.hpp"

using namespace flsim;
using testing::max_abs_diff;

namespace {

Matrix permute_rows(const Matrix& m, std::uint64_t seed) {
    std::vector<std::size_t> order(m.rows());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(std::span(order));
    return m.select_rows(order);
}

}  // namespace

TEST_SUITE("defenses") {

TEST_CASE("fed_avg") {
    CHECK(fed_avg(Matrix::from_rows({{1, 2}, {3, 4}})) == UpdateVector{2, 3});
    CHECK(fed_avg(Matrix::from_rows({{5, -1}})) == UpdateVector{5, -1});
    CHECK_THROWS_AS(fed_avg(Matrix(0, 3)), AggregationError);
    Rng rng(1);
    const Matrix g = testing::random_matrix(5, 7, rng);
    CHECK(max_abs_diff(fed_avg(g), oracle::mean(testing::to_rows(g))) <= 1e-12);
}

TEST_CASE("trimmed mean fixtures") {
    const Matrix col = Matrix::from_rows({{1}, {2}, {3}, {4}, {100}});
    CHECK(defenses::trimmed_mean(col, 1)[0] == doctest::Approx(3.0));
    Rng rng(2);
    const Matrix g = testing::random_matrix(6, 3, rng);
    CHECK(max_abs_diff(defenses::trimmed_mean(g, 0), fed_avg(g)) <= 1e-15);
    CHECK(max_abs_diff(defenses::trimmed_mean(permute_rows(g, 3), 2), defenses::trimmed_mean(g, 2)) <= 1e-15);
    CHECK_THROWS_AS(defenses::trimmed_mean(g, 3), ConfigError);
}

TEST_CASE("multi-krum count") {
    CHECK(defenses::multi_krum_count(6, 1) == 1);
    CHECK(defenses::multi_krum_count(20, 4) == 9);
    CHECK_THROWS_AS(defenses::multi_krum_count(5, 1), ConfigError);
}

TEST_CASE("multi-krum never selects a far outlier") {
    Rng rng(4);
    Matrix g = testing::random_matrix(6, 3, rng, -0.01, 0.01);
    for (double& x : g.row(2)) {
        x += 50.0;
    }
    const auto res = defenses::multi_krum(g, 1);
    CHECK(std::find(res.selected.begin(), res.selected.end(), 2) == res.selected.end());
    const auto ref = oracle::multi_krum(testing::to_rows(g), 1);
    CHECK(res.selected == ref.selected);
    CHECK(max_abs_diff(res.aggregate, ref.aggregate) <= 1e-12);
}

TEST_CASE("bulyan fixtures") {
    Rng rng(5);
    const Matrix g = testing::random_matrix(5, 3, rng);
    CHECK(max_abs_diff(defenses::bulyan(g, 0).aggregate, fed_avg(g)) <= 1e-15);

    Matrix h = testing::random_matrix(8, 4, rng);
    for (double& x : h.row(5)) {
        x = -40.0;
    }
    const auto res = defenses::bulyan(h, 1);
    for (std::size_t j = 0; j < 4; ++j) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t r = 0; r < 8; ++r) {
            if (r != 5) {
                lo = std::min(lo, h(r, j));
                hi = std::max(hi, h(r, j));
            }
        }
        CHECK(res.aggregate[j] >= lo);
        CHECK(res.aggregate[j] <= hi);
    }
    // staged composition
    const auto sel = defenses::krum_select(h, 1, 6);
    CHECK(max_abs_diff(res.aggregate, defenses::trimmed_mean(h.select_rows(sel), 1)) <= 1e-15);
    CHECK_THROWS_AS(defenses::bulyan(testing::random_matrix(4, 2, rng), 1), ConfigError);
}

TEST_CASE("robust aggregators match brute-force oracles on small instances") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        const std::size_t n = 3 + rng.below(6);
        const std::size_t d = 1 + rng.below(4);
        const Matrix g = testing::random_matrix(n, d, rng);
        const auto rows = testing::to_rows(g);
        const std::size_t m = rng.below((n - 1) / 2 + 1);
        CHECK(max_abs_diff(defenses::trimmed_mean(g, m), oracle::trimmed_mean(rows, m)) <= 1e-12);
        if (n >= 4) {
            const std::size_t big_m = rng.below((n - 4) / 2 + 1);
            const auto mk = defenses::multi_krum(g, big_m);
            const auto mk_ref = oracle::multi_krum(rows, big_m);
            CHECK(mk.selected == mk_ref.selected);
            CHECK(max_abs_diff(mk.aggregate, mk_ref.aggregate) <= 1e-12);
        }
        const std::size_t bm = rng.below((n - 1) / 4 + 1);
        const auto by = defenses::bulyan(g, bm);
        const auto by_ref = oracle::bulyan(rows, bm);
        CHECK(by.selected == by_ref.selected);
        CHECK(max_abs_diff(by.aggregate, by_ref.aggregate) <= 1e-12);
    }
}

TEST_CASE("vector-wise aggregators are row-permutation invariant") {
    Rng rng(7);
    const Matrix g = testing::random_matrix(8, 3, rng);
    const Matrix p = permute_rows(g, 8);
    CHECK(max_abs_diff(defenses::multi_krum(g, 1).aggregate, defenses::multi_krum(p, 1).aggregate) <= 1e-12);
    CHECK(max_abs_diff(defenses::bulyan(g, 1).aggregate, defenses::bulyan(p, 1).aggregate) <= 1e-12);
}

TEST_CASE("dnc on identical rows returns the row") {
    const Matrix g(6, 3, 0.25);
    Rng rng(1);
    const auto res = defenses::dnc(g, 1, {}, rng);
    CHECK(res.selected.size() == 4);
    for (double x : res.aggregate) {
        CHECK(x == doctest::Approx(0.25));
    }
}

TEST_CASE("dnc planted outlier scores highest") {
    const Matrix g = Matrix::from_rows({{0.1, 0.0}, {-0.1, 0.05}, {3.0, 2.0}});
    Rng rng(2);
    const auto scores = defenses::dnc_outlier_scores(g, rng);
    CHECK(std::max_element(scores.begin(), scores.end()) - scores.begin() == 2);

    // power-iteration oracle on the centered 3x2 matrix
    double mu[2] = {(0.1 - 0.1 + 3.0) / 3, (0.0 + 0.05 + 2.0) / 3};
    double c[3][2];
    for (int r = 0; r < 3; ++r) {
        for (int j = 0; j < 2; ++j) {
            c[r][j] = g(static_cast<std::size_t>(r), static_cast<std::size_t>(j)) - mu[j];
        }
    }
    double v[2] = {1.0, 0.3};
    for (int it = 0; it < 500; ++it) {
        double w[2] = {0, 0};
        for (int r = 0; r < 3; ++r) {
            const double p = c[r][0] * v[0] + c[r][1] * v[1];
            w[0] += c[r][0] * p;
            w[1] += c[r][1] * p;
        }
        const double n = std::hypot(w[0], w[1]);
        v[0] = w[0] / n;
        v[1] = w[1] / n;
    }
    for (int r = 0; r < 3; ++r) {
        const double p = c[r][0] * v[0] + c[r][1] * v[1];
        CHECK(scores[static_cast<std::size_t>(r)] == doctest::Approx(p * p).epsilon(1e-8));
    }
}

TEST_CASE("dnc removes ceil(e*M) rows per iteration") {
    Rng data_rng(3);
    const Matrix g = testing::random_matrix(10, 5, data_rng);
    Rng rng(4);
    const auto res = defenses::dnc(g, 2, {.e = 1.5, .iters = 1, .subdim = 5}, rng);
    CHECK(res.selected.size() == 7);
    CHECK(max_abs_diff(res.aggregate, mean_of_rows(g, res.selected)) <= 1e-15);

    Rng a(9), b(9);
    CHECK(defenses::dnc(g, 2, {.e = 1.5, .iters = 2, .subdim = 3}, a).aggregate ==
          defenses::dnc(g, 2, {.e = 1.5, .iters = 2, .subdim = 3}, b).aggregate);
    Rng c(1);
    CHECK_THROWS_AS(defenses::dnc(g, 7, {.e = 1.5}, c), ConfigError);
    CHECK_THROWS_AS(defenses::dnc(g, 2, {.e = 0.0}, c), ConfigError);
}

TEST_CASE("dnc object is deterministic per round") {
    Rng data_rng(5);
    const Matrix g = testing::random_matrix(10, 6, data_rng);
    defenses::Dnc a(2, {.e = 1.5, .iters = 1, .subdim = 3}, 11);
    a.begin_round({.round = 3});
    defenses::Dnc b(2, {.e = 1.5, .iters = 1, .subdim = 3}, 11);
    b.begin_round({.round = 3});
    CHECK(a.aggregate(g).aggregate == b.probe(g).aggregate);
}

TEST_CASE("fltrust combinations") {
    const std::vector<double> g0{1.0, -2.0, 0.5};
    const Matrix same = Matrix::from_rows({g0, g0});
    auto res = defenses::fltrust_combine(same, g0);
    CHECK(max_abs_diff(res.aggregate, g0) <= 1e-15);

    const Matrix neg = Matrix::from_rows({{-1.0, 2.0, -0.5}});
    res = defenses::fltrust_combine(neg, g0);
    CHECK(res.selected.empty());
    CHECK(res.aggregate == std::vector<double>{0, 0, 0});

    const Matrix mixed = Matrix::from_rows({g0, {-1.0, 2.0, -0.5}, {2.0, -4.0, 1.0}});
    res = defenses::fltrust_combine(mixed, g0);
    CHECK(res.selected == std::vector<std::size_t>{0, 2});
    CHECK(max_abs_diff(res.aggregate, g0) <= 1e-15);

    CHECK_THROWS_AS(defenses::fltrust_combine(same, std::vector<double>{0, 0, 0}), DegenerateInputError);
}

TEST_CASE("fltrust object computes its server update from the root set") {
    const auto root = data::synth_dataset(2, 3, 10, 0.1, 1);
    Rng rng(0);
    const nn::Model w = nn::init_model(nn::Architecture::mlp({3, 2}), rng);
    defenses::FLTrust f(root, {.local_iters = 1, .batch = 8, .lr = 0.1}, 4);
    f.begin_round({.round = 1, .global = &w});
    CHECK(f.server_update().size() == w.parameter_count());
    Matrix g(1, w.parameter_count());
    std::copy(f.server_update().begin(), f.server_update().end(), g.row(0).begin());
    CHECK(f.probe(g).selected == std::vector<std::size_t>{0});

    defenses::FLTrust frozen(root, {.local_iters = 1, .batch = 8, .lr = 0.0}, 4);
    frozen.begin_round({.round = 1, .global = &w});
    CHECK_THROWS_AS(frozen.probe(g), DegenerateInputError);
    CHECK_THROWS_AS(defenses::FLTrust(data::Dataset{}, {}, 0), ConfigError);
}

}  // TEST_SUITE
