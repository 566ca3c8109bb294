#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "flsim/error.hpp"
#include "flsim/flguard.hpp"
#include "helpers.hpp"

using namespace flsim;
using namespace flsim::flguard;

namespace {

std::set<std::set<std::size_t>> as_partition(const Clusters& c) {
    return {std::set<std::size_t>(c.a.begin(), c.a.end()), std::set<std::size_t>(c.b.begin(), c.b.end())};
}

nn::Model identity_encoder(std::size_t width) {
    nn::Model m;
    for (int l = 0; l < 2; ++l) {
        nn::Layer layer;
        layer.weight = Matrix(width, width);
        for (std::size_t i = 0; i < width; ++i) {
            layer.weight(i, i) = 1.0;
        }
        layer.bias.assign(width, 0.0);
        layer.activation = l == 0 ? nn::Activation::leaky_relu : nn::Activation::linear;
        m.layers.push_back(layer);
    }
    return m;
}

FLGuardAssets identity_assets(const Matrix& g_fit) {
    FLGuardAssets a;
    const std::size_t d = g_fit.cols();
    a.selector_lv = fit_low_variance_selector(g_fit, d);
    a.selector_rd = fit_random_selector(d, 0, d);
    a.scaler.lv = fit_scaler(g_fit);
    a.scaler.rd = a.scaler.lv;
    a.model_lv = identity_encoder(d);
    a.model_rd = identity_encoder(d);
    return a;
}

// 5 tight benign rows (0..4) and 2 colluding rows (5, 6) far from them
Matrix planted(std::uint64_t seed) {
    Rng rng(seed);
    Matrix g = testing::random_matrix(7, 6, rng, -0.05, 0.05);
    for (std::size_t r = 5; r < 7; ++r) {
        for (double& x : g.row(r)) {
            x += 3.0;
        }
    }
    return g;
}

}  // namespace

TEST_SUITE("flguard") {

TEST_CASE("low-variance selector") {
    const Matrix g = Matrix::from_rows({{0, 5, 1, 3}, {0, -5, -1, -3}});
    const auto sel = fit_low_variance_selector(g, 2);
    CHECK(sel.indices == std::vector<std::size_t>{1, 3});
    CHECK(sel.kind == SelectorKind::low_variance);
    CHECK(fit_low_variance_selector(g, 4).indices == std::vector<std::size_t>{0, 1, 2, 3});

    Rng rng(1);
    Matrix wide = testing::random_matrix(5, 3100, rng);
    for (std::size_t r = 0; r < 5; ++r) {
        wide(r, 17) = 0.4;
    }
    const auto lv = fit_low_variance_selector(wide);
    CHECK(lv.indices.size() == 3072);
    CHECK_FALSE(std::binary_search(lv.indices.begin(), lv.indices.end(), 17));
    CHECK(std::is_sorted(lv.indices.begin(), lv.indices.end()));

    // equal variances keep the lower index
    const Matrix tie = Matrix::from_rows({{1, 1, 1}, {-1, -1, -1}});
    CHECK(fit_low_variance_selector(tie, 2).indices == std::vector<std::size_t>{0, 1});
    CHECK_THROWS_AS(fit_low_variance_selector(Matrix(3, 1), 2), ConfigError);
    CHECK_THROWS_AS(fit_low_variance_selector(Matrix(1, 4), 2), InputError);
}

TEST_CASE("random selector") {
    const auto all = fit_random_selector(100, 3);
    CHECK(all.indices.size() == 100);
    CHECK(all.indices.back() == 99);
    CHECK(fit_random_selector(5000, 7) == fit_random_selector(5000, 7));
    const auto s = fit_random_selector(5000, 7);
    CHECK(s.indices.size() == 3072);
    CHECK(std::adjacent_find(s.indices.begin(), s.indices.end(), std::greater_equal<>()) == s.indices.end());
    CHECK(s.indices.back() < 5000);
}

TEST_CASE("random selector coverage at d = 6144") {
    // 1000 Bernoulli(0.5) draws per coordinate have sd 0.0158, so a few of the
    // 6144 coordinates are expected past +-0.05; require 99% inside it and none
    // past 5 sd
    std::vector<int> count(6144, 0);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        for (std::size_t i : fit_random_selector(6144, seed).indices) {
            ++count[i];
        }
    }
    std::size_t inside = 0;
    double worst = 0.0;
    for (int c : count) {
        const double dev = std::abs(c / 1000.0 - 0.5);
        inside += dev <= 0.05;
        worst = std::max(worst, dev);
    }
    CHECK(static_cast<double>(inside) / 6144.0 >= 0.99);
    CHECK(worst <= 5 * std::sqrt(0.25 / 1000.0));
}

TEST_CASE("selector application checks the source width") {
    const auto s = fit_random_selector(10, 1, 4);
    CHECK(s.apply(Matrix(2, 10)).cols() == 4);
    CHECK_THROWS_AS(s.apply(Matrix(2, 11)), ConfigError);
}

TEST_CASE("max-abs scaler") {
    const Matrix col = Matrix::from_rows({{2, 0}, {-4, 0}, {1, 0}});
    const auto sc = fit_scaler(col);
    const Matrix out = sc.apply(col);
    CHECK(out(0, 0) == 0.5);
    CHECK(out(1, 0) == -1.0);
    CHECK(out(2, 0) == 0.25);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(out(r, 1) == 0.0);
    }
    // later rows are not clamped and keep their sign
    const Matrix later = sc.apply(Matrix::from_rows({{-10, 3}}));
    CHECK(later(0, 0) == -2.5);
    CHECK(later(0, 1) == 0.0);
    CHECK_THROWS_AS(sc.apply(Matrix(1, 3)), ConfigError);
}

TEST_CASE("augment") {
    const std::vector<double> row{0.1, -0.2, 0.3};
    Rng rng(3);
    auto [a, b] = augment(row, 0.01, 0.0, rng);
    CHECK(a == row);
    CHECK(b == row);
    auto [c, d] = augment(row, 0.0, 1.0, rng);
    CHECK(c == row);
    CHECK(d == row);

    const std::vector<double> zeros(100000, 0.0);
    auto [v1, v2] = augment(zeros, 0.01, 0.1, rng);
    const auto touched = [](const std::vector<double>& v) {
        return static_cast<double>(std::count_if(v.begin(), v.end(), [](double x) { return x != 0.0; })) / 1e5;
    };
    CHECK(std::abs(touched(v1) - 0.1) <= 0.01);
    CHECK(std::abs(touched(v2) - 0.1) <= 0.01);
    CHECK(v1 != v2);
}

TEST_CASE("nt-xent closed forms and pair counts") {
    CHECK(nt_xent(Matrix(4, 5, 1.0), 0.01) == std::log(3.0));
    CHECK(nt_xent(Matrix(8, 3, -2.0), 0.5) == doctest::Approx(std::log(7.0)).epsilon(1e-15));
    const auto pc = nt_xent_pair_counts(32);
    CHECK(pc.positive == 32);
    CHECK(pc.negative == 1984);
    CHECK_THROWS_AS(nt_xent(Matrix(2, 3, 1.0), 0.1), DegenerateInputError);
    CHECK_THROWS_AS(nt_xent(Matrix(5, 3, 1.0), 0.1), InputError);
}

TEST_CASE("nt-xent matches the double-loop oracle") {
    for (std::size_t b = 2; b <= 6; ++b) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(seed * 10 + b);
            const Matrix z = testing::random_matrix(2 * b, 7, rng);
            for (double tau : {0.01, 0.1, 1.0}) {
                const double ref = oracle::nt_xent(testing::to_rows(z), tau);
                CHECK(std::abs(nt_xent(z, tau) - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
                CHECK(nt_xent_with_grad(z, tau).loss == nt_xent(z, tau));
            }
        }
    }
}

TEST_CASE("nt-xent gradient through encoder and head matches finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        nn::Model m = nn::init_model(contrastive_architecture(8, 0.01), rng);
        const Matrix views = testing::random_matrix(4, 8, rng);
        const double tau = 0.5;
        nn::ForwardCache cache;
        const Matrix z = nn::forward(m, views, cache);
        const NtXent nx = nt_xent_with_grad(z, tau);
        std::vector<double> grad(m.parameter_count());
        nn::backward(m, cache, nx.grad, grad);
        auto flat = nn::flatten(m);
        for (std::size_t i = 0; i < flat.size(); ++i) {
            const double keep = flat[i];
            flat[i] = keep + 1e-6;
            nn::assign_flat(m, flat);
            const double up = nt_xent(nn::forward(m, views), tau);
            flat[i] = keep - 1e-6;
            nn::assign_flat(m, flat);
            const double down = nt_xent(nn::forward(m, views), tau);
            flat[i] = keep;
            nn::assign_flat(m, flat);
            CHECK(testing::rel_err(grad[i], (up - down) / 2e-6, 1e-5) <= 1e-3);
        }
    }
}

TEST_CASE("contrastive training lowers the loss and is deterministic") {
    Rng data_rng(5);
    Matrix g(40, 12);
    for (std::size_t r = 0; r < 40; ++r) {
        for (std::size_t j = 0; j < 12; ++j) {
            g(r, j) = (r < 20 ? 0.5 : -0.5) * (j % 2 ? 1.0 : -1.0) + 0.1 * data_rng.normal();
        }
    }
    Hyper h;
    h.epochs = 20;
    h.batch = 8;
    h.tau = 0.5;
    h.lr = 0.01;
    TrainingLog log;
    const auto a = train_contrastive(g, h, 9, 5, &log);
    REQUIRE(log.epoch_loss_lv.size() == 20);
    CHECK(log.epoch_loss_lv.back() < log.epoch_loss_lv.front());
    CHECK(log.epoch_loss_rd.back() < log.epoch_loss_rd.front());
    CHECK(a.model_lv.layers.size() == kEncoderLayers);
    CHECK(a.trained_at_round == 5);
    CHECK(serialize(train_contrastive(g, h, 9, 5)) == serialize(a));
    CHECK_FALSE(serialize(train_contrastive(g, h, 10, 5)) == serialize(a));
}

TEST_CASE("encode") {
    nn::Model zero = identity_encoder(3);
    for (auto& layer : zero.layers) {
        layer.weight = Matrix(3, 3);
    }
    zero.layers[1].bias = {1.0, -2.0, 0.5};
    const Matrix h = encode(zero, Matrix::from_rows({{1, 2, 3}, {-4, 5, 6}}));
    CHECK(h.row(0)[0] == 1.0);
    CHECK(std::equal(h.row(0).begin(), h.row(0).end(), h.row(1).begin()));

    Rng rng(2);
    const nn::Model full = nn::init_model(contrastive_architecture(4, 0.01), rng);
    const Matrix x = testing::random_matrix(2, 4, rng);
    const Matrix e = encode(full, x);
    const auto dense = testing::to_dense(full);
    const auto ref = oracle::forward({dense[0], dense[1]}, testing::to_rows(x));
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(std::abs(e(r, c) - ref[r][c]) <= 1e-12);
        }
    }
    const std::vector<std::size_t> swap{1, 0};
    CHECK(encode(full, x.select_rows(swap)) == e.select_rows(swap));
    CHECK_THROWS_AS(encode(full, Matrix(2, 5)), ConfigError);
}

TEST_CASE("pca2 basic laws") {
    Matrix line(6, 3);
    for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t j = 0; j < 3; ++j) {
            line(r, j) = static_cast<double>(r) * (j + 1.0) + 0.5;
        }
    }
    const Matrix p = pca2(line);
    for (std::size_t r = 0; r < 6; ++r) {
        CHECK(std::abs(p(r, 1)) <= 1e-9);
    }

    Rng rng(3);
    const Matrix h = testing::random_matrix(10, 5, rng);
    const Matrix q = pca2(h);
    double v0 = 0, v1 = 0;
    for (std::size_t r = 0; r < 10; ++r) {
        v0 += q(r, 0) * q(r, 0);
        v1 += q(r, 1) * q(r, 1);
    }
    CHECK(v0 >= v1);

    Matrix shifted = h;
    for (std::size_t r = 0; r < 10; ++r) {
        for (std::size_t j = 0; j < 5; ++j) {
            shifted(r, j) += 3.0 * j - 1.0;
        }
    }
    const Matrix qs = pca2(shifted);
    for (std::size_t c = 0; c < 2; ++c) {
        double same = 0, flipped = 0;
        for (std::size_t r = 0; r < 10; ++r) {
            same = std::max(same, std::abs(qs(r, c) - q(r, c)));
            flipped = std::max(flipped, std::abs(qs(r, c) + q(r, c)));
        }
        CHECK(std::min(same, flipped) <= 1e-9);
    }
    CHECK_THROWS_AS(pca2(Matrix(1, 3)), InputError);
}

TEST_CASE("pca2 on planar points matches the closed-form eigensolve") {
    const Matrix toy = Matrix::from_rows({{0, 0}, {2, 1}, {1, 3}, {4, 2}});
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const Matrix h = seed == 0 ? toy : testing::random_matrix(4 + rng.below(8), 2, rng, -3, 3);
        const Matrix p = pca2(h);
        const auto ref = oracle::pca_2d(testing::to_rows(h));
        for (std::size_t c = 0; c < 2; ++c) {
            double same = 0, flipped = 0;
            for (std::size_t r = 0; r < h.rows(); ++r) {
                same = std::max(same, std::abs(p(r, c) - ref[r][c]));
                flipped = std::max(flipped, std::abs(p(r, c) + ref[r][c]));
            }
            CHECK(std::min(same, flipped) <= 1e-9);
        }
    }
}

TEST_CASE("single-linkage two clusters") {
    const Matrix pts = Matrix::from_rows({{0, 0}, {1, 0}, {10, 0}});
    const auto c = ahc_two_clusters(pts);
    CHECK(c.a == std::vector<std::size_t>{0, 1});
    CHECK(c.b == std::vector<std::size_t>{2});
    const auto two = ahc_two_clusters(Matrix::from_rows({{0, 0}, {5, 5}}));
    CHECK(two.a == std::vector<std::size_t>{0});
    CHECK(two.b == std::vector<std::size_t>{1});
    CHECK_THROWS_AS(ahc_two_clusters(Matrix(1, 2)), InputError);
}

TEST_CASE("single-linkage matches the merge-simulation oracle") {
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        Rng rng(seed);
        const std::size_t n = 2 + rng.below(7);
        const Matrix pts = testing::random_matrix(n, 2, rng);
        const auto got = ahc_two_clusters(pts);
        const auto [ra, rb] = oracle::single_linkage_two(testing::to_rows(pts));
        CHECK(got.a == ra);
        CHECK(got.b == rb);

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(std::span(order));
        auto perm = ahc_two_clusters(pts.select_rows(order));
        for (auto& i : perm.a) {
            i = order[i];
        }
        for (auto& i : perm.b) {
            i = order[i];
        }
        CHECK(as_partition(perm) == as_partition(got));
    }
}

TEST_CASE("pick_benign") {
    Matrix pts(10, 1);
    for (std::size_t i = 0; i < 10; ++i) {
        pts(i, 0) = i < 5 ? 0.01 * i : 10.0 * i;
    }
    Clusters big{{0, 1, 2, 3, 4, 5, 6}, {7, 8, 9}};
    CHECK(pick_benign(big, pts) == big.a);
    Clusters even{{5, 6, 7, 8, 9}, {0, 1, 2, 3, 4}};
    CHECK(pick_benign(even, pts) == even.b);
    Matrix flat(4, 1);
    flat(1, 0) = 1.0;
    flat(3, 0) = 1.0;
    Clusters tie{{0, 2}, {1, 3}};
    flat(2, 0) = 0.5;
    flat(3, 0) = 1.5;
    CHECK(pick_benign(tie, flat) == tie.a);
}

TEST_CASE("filtering keeps the planted benign rows") {
    const Matrix g = planted(4);
    const auto assets = identity_assets(g);
    const auto res = filter_clients(g, assets);
    CHECK(res.c_good == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(res.c_lv == res.c_rd);
    CHECK_FALSE(res.fallback_used);

    // the same answer from the oracle chain
    const Matrix h = encode(assets.model_lv, preprocess_lv(assets, g));
    const Matrix p = pca2(h);
    const auto [ra, rb] = oracle::single_linkage_two(testing::to_rows(p));
    const auto& bigger = ra.size() > rb.size() ? ra : rb;
    CHECK(bigger == res.c_good);

    CHECK(testing::max_abs_diff(flguard_aggregate(g, res.c_good), oracle::mean(testing::to_rows(g.select_rows(res.c_good)))) <=
          1e-12);
    CHECK(flguard_aggregate(g, {3}) == std::vector<double>(g.row(3).begin(), g.row(3).end()));
}

TEST_CASE("flguard aggregator cold start, training cadence and window") {
    Hyper h;
    h.epochs = 1;
    h.batch = 8;
    FLGuard guard(h, 3, 1);
    for (std::size_t r = 1; r <= 7; ++r) {
        guard.begin_round({.round = r});
        const Matrix g = planted(r);
        const auto res = guard.aggregate(g);
        if (r < 3) {
            CHECK(res.selected.size() == 7);
            CHECK(guard.assets() == nullptr);
            CHECK(res.aggregate == fed_avg(g));
        }
        CHECK(guard.history_rows() == 7 * std::min<std::size_t>(r, 3));
        CHECK(guard.training_events() == r / 3);
        CHECK_FALSE(res.selected.empty());
    }
    CHECK(guard.assets()->trained_at_round == 6);
    CHECK_THROWS_AS(FLGuard(h, 0, 1), ConfigError);
}

TEST_CASE("probe does not change state") {
    Hyper h;
    h.epochs = 1;
    FLGuard guard(h, 1, 2);
    guard.begin_round({.round = 1});
    guard.probe(planted(1));
    CHECK(guard.history_rows() == 0);
    CHECK(guard.training_events() == 0);
}

TEST_CASE("assets serialization round trip and corrupt blobs") {
    Rng rng(5);
    Hyper h;
    h.epochs = 1;
    h.batch = 4;
    const auto assets = train_contrastive(testing::random_matrix(10, 6, rng), h, 3, 10);
    const auto blob = serialize(assets);
    CHECK(deserialize(blob) == assets);
    CHECK(blob[0] == 'F');
    CHECK(blob[3] == 'A');

    auto bad = blob;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize(bad), IngestError);
    bad = blob;
    bad[4] = 9;
    CHECK_THROWS_AS(deserialize(bad), IngestError);
    bad = blob;
    bad.pop_back();
    CHECK_THROWS_AS(deserialize(bad), IngestError);
    bad = blob;
    bad.push_back(0);
    CHECK_THROWS_AS(deserialize(bad), IngestError);
    CHECK_THROWS_AS(deserialize(std::vector<std::uint8_t>{}), IngestError);
}

TEST_CASE("hyper validation") {
    Hyper h;
    CHECK_NOTHROW(validate(h));
    h.tau = 0;
    CHECK_THROWS_AS(validate(h), ConfigError);
    h = Hyper{};
    h.mask_ratio = 1.5;
    CHECK_THROWS_AS(validate(h), ConfigError);
    h = Hyper{};
    h.n_clusters = 3;
    CHECK_THROWS_AS(validate(h), ConfigError);
}

}  // TEST_SUITE
