#include <cmath>

#include "doctest.h"
#include "flsim/nn.hpp"
#include "helpers.hpp"

using namespace flsim;

namespace {

nn::Model random_model(const std::vector<std::size_t>& widths, std::uint64_t seed) {
    Rng rng(seed);
    nn::Model m = nn::init_model(nn::Architecture::mlp(widths), rng);
    for (auto& layer : m.layers) {
        for (double& b : layer.bias) {
            b = rng.uniform(-0.5, 0.5);
        }
    }
    return m;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("identity linear layer passes the batch through") {
    nn::Model m;
    nn::Layer layer;
    layer.weight = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    layer.bias = {0, 0, 0};
    m.layers.push_back(layer);
    const Matrix x = Matrix::from_rows({{1, -2, 3}, {0.5, 0, -7}});
    CHECK(nn::forward(m, x) == x);
}

TEST_CASE("leaky relu definition") {
    CHECK(nn::leaky_relu(-1.0, 0.01) == doctest::Approx(-0.01));
    CHECK(nn::leaky_relu(2.0, 0.01) == 2.0);
}

TEST_CASE("two-layer forward matches the unrolled oracle") {
    const nn::Model m = random_model({5, 7, 3}, 4);
    Rng rng(8);
    const Matrix x = testing::random_matrix(6, 5, rng);
    const Matrix out = nn::forward(m, x);
    const auto ref = oracle::forward(testing::to_dense(m), testing::to_rows(x));
    for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(std::abs(out(r, c) - ref[r][c]) <= 1e-12);
        }
    }
    CHECK(nn::forward(m, x) == out);
}

TEST_CASE("forward rejects a wrong input width") {
    const nn::Model m = random_model({5, 3}, 1);
    CHECK_THROWS_AS(nn::forward(m, Matrix(2, 4)), ConfigError);
}

TEST_CASE("cross entropy of uniform logits is ln 2") {
    nn::Model m;
    nn::Layer layer;
    layer.weight = Matrix(3, 2);
    layer.bias = {0.4, 0.4};
    m.layers.push_back(layer);
    const Matrix x = Matrix::from_rows({{1, 2, 3}, {-1, 0, 1}});
    const std::vector<int> y{0, 1};
    CHECK(nn::cross_entropy_loss(m, x, y) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
    const nn::Model m = random_model({2, 3}, 1);
    const std::vector<int> y{3};
    CHECK_THROWS_AS(nn::backward_cross_entropy(m, Matrix(1, 2), y), InputError);
    const std::vector<int> neg{-1};
    CHECK_THROWS_AS(nn::backward_cross_entropy(m, Matrix(1, 2), neg), InputError);
}

TEST_CASE("bias gradient of a zero model is softmax(b) - onehot") {
    nn::Model m;
    nn::Layer layer;
    layer.weight = Matrix(2, 2);
    layer.bias = {0.3, -0.2};
    m.layers.push_back(layer);
    const std::vector<int> y{1};
    const auto lg = nn::backward_cross_entropy(m, Matrix(1, 2), y);
    const double e0 = std::exp(0.3), e1 = std::exp(-0.2);
    CHECK(lg.grad[4] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-14));
    CHECK(lg.grad[5] == doctest::Approx(e1 / (e0 + e1) - 1.0).epsilon(1e-14));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(lg.grad[i] == 0.0);
    }
}

TEST_CASE("cross-entropy gradient matches central differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        nn::Model m = random_model({4, 6, 5, 3}, seed);
        Rng rng(seed + 100);
        const Matrix x = testing::random_matrix(5, 4, rng);
        std::vector<int> y(5);
        for (int& v : y) {
            v = static_cast<int>(rng.below(3));
        }
        const auto lg = nn::backward_cross_entropy(m, x, y);
        auto flat = nn::flatten(m);
        for (std::size_t i = 0; i < flat.size(); ++i) {
            const double keep = flat[i];
            flat[i] = keep + 1e-6;
            nn::assign_flat(m, flat);
            const double up = nn::cross_entropy_loss(m, x, y);
            flat[i] = keep - 1e-6;
            nn::assign_flat(m, flat);
            const double down = nn::cross_entropy_loss(m, x, y);
            flat[i] = keep;
            nn::assign_flat(m, flat);
            CHECK(testing::rel_err(lg.grad[i], (up - down) / 2e-6, 1e-6) <= 1e-4);
        }
    }
}

TEST_CASE("sgd step arithmetic") {
    nn::Model m;
    nn::Layer layer;
    layer.weight = Matrix::from_rows({{1}});
    layer.bias = {1};
    m.layers.push_back(layer);
    const std::vector<double> g{2, -2};
    CHECK(nn::flatten(nn::sgd_step(m, g, 0.5)) == std::vector<double>{0, 2});
    CHECK(nn::sgd_step(m, g, 0.0) == m);
    CHECK(nn::sgd_step(m, std::vector<double>{0, 0}, 0.5) == m);
}

TEST_CASE("adam first step moves by lr and two steps follow the recurrence") {
    nn::Model m;
    nn::Layer layer;
    layer.weight = Matrix::from_rows({{0.5}});
    layer.bias = {0.0};
    m.layers.push_back(layer);
    nn::AdamState st = nn::AdamState::for_model(m, 0.01);
    auto [p0, s0] = nn::adam_step(st, m, std::vector<double>{0, 0});
    CHECK(p0 == m);

    const double g = 0.3;
    auto [p1, s1] = nn::adam_step(st, m, std::vector<double>{g, 0});
    CHECK(p1.layers[0].weight(0, 0) == doctest::Approx(0.5 - 0.01 * g / (std::abs(g) + 1e-8)).epsilon(1e-14));
    CHECK(s1.t == 1);

    auto [p2, s2] = nn::adam_step(s1, p1, std::vector<double>{g, 0});
    // hand-unrolled scalar recurrence
    double w = 0.5, mm = 0, vv = 0;
    for (int t = 1; t <= 2; ++t) {
        mm = 0.9 * mm + 0.1 * g;
        vv = 0.999 * vv + 0.001 * g * g;
        const double mh = mm / (1 - std::pow(0.9, t));
        const double vh = vv / (1 - std::pow(0.999, t));
        w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(std::abs(p2.layers[0].weight(0, 0) - w) <= 1e-12);
    CHECK(s2.t == 2);
}

TEST_CASE("flatten and unflatten are inverse") {
    const nn::Model m = random_model({6, 4, 3}, 21);
    const auto flat = nn::flatten(m);
    CHECK(nn::unflatten(flat, m.architecture()) == m);
    CHECK(nn::flatten(nn::unflatten(flat, m.architecture())) == flat);
    CHECK(nn::flatten(m) == flat);
    CHECK_THROWS_AS(nn::unflatten(std::vector<double>(flat.size() - 1), m.architecture()), InputError);
}

TEST_CASE("parameter count of 784-128-10") {
    CHECK(nn::Architecture::mlp({784, 128, 10}).parameter_count() == 101770);
}

TEST_CASE("gradient descent on a convex toy never increases the loss") {
    Rng rng(3);
    nn::Model m = nn::init_model(nn::Architecture::mlp({2, 2}), rng);
    Matrix x(40, 2);
    std::vector<int> y(40);
    for (std::size_t i = 0; i < 40; ++i) {
        y[i] = static_cast<int>(i % 2);
        x(i, 0) = (y[i] ? 1.0 : -1.0) + rng.uniform(-0.3, 0.3);
        x(i, 1) = rng.uniform(-1, 1);
    }
    double prev = nn::cross_entropy_loss(m, x, y);
    for (int step = 0; step < 100; ++step) {
        const auto lg = nn::backward_cross_entropy(m, x, y);
        nn::sgd_step_inplace(m, lg.grad, 0.01);
        const double now = nn::cross_entropy_loss(m, x, y);
        CHECK(now <= prev + 1e-15);
        prev = now;
    }
}

TEST_CASE("predict breaks ties toward the lowest class") {
    nn::Model m;
    nn::Layer layer;
    layer.weight = Matrix(1, 3);
    layer.bias = {0.5, 0.5, 0.1};
    m.layers.push_back(layer);
    CHECK(nn::predict(m, Matrix(2, 1)) == std::vector<int>{0, 0});
}

TEST_CASE("init uses bounded Glorot-uniform weights and zero biases") {
    Rng rng(1);
    const nn::Model m = nn::init_model(nn::Architecture::mlp({10, 30}), rng);
    const double bound = std::sqrt(6.0 / 40.0);
    for (double w : m.layers[0].weight.values()) {
        CHECK(std::abs(w) <= bound);
    }
    for (double b : m.layers[0].bias) {
        CHECK(b == 0.0);
    }
}

}  // TEST_SUITE
