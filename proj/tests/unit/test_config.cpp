#include <string>

#include "doctest.h"
#include "flsim/config.hpp"
#include "flsim/error.hpp"

using namespace flsim;

namespace {

std::string error_of(const std::string& text) {
    try {
        config::validate(config::parse(text, "exp.cfg"));
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("key-value parsing") {
    const auto cfg = config::parse(
        "# comment\n"
        "seed = 7\n"
        "fl.N = 10   # trailing\n"
        "fl.M = 2\n"
        "dataset.q = 0.5\n"
        "attack.kind = lie\n"
        "attack.threat = T3\n"
        "defense.kind = flguard\n"
        "flguard.width = 64\n"
        "model.hidden = 16,8\n");
    CHECK(cfg.seed == 7);
    CHECK(cfg.fl.N == 10);
    CHECK(cfg.fl.M == 2);
    CHECK(*cfg.dataset.q == 0.5);
    CHECK(cfg.attack.spec.kind == attacks::AttackKind::lie);
    CHECK(cfg.attack.threat == attacks::ThreatModel::t3);
    CHECK(cfg.defense.flguard.width == 64);
    CHECK(cfg.model.hidden == std::vector<std::size_t>{16, 8});
    CHECK_NOTHROW(config::validate(cfg));
}

TEST_CASE("json encodings of the same keys") {
    const auto flat = config::parse(R"({"seed": 3, "fl.N": 12, "defense.kind": "multi_krum"})");
    const auto nested = config::parse(R"({"seed": 3, "fl": {"N": 12}, "defense": {"kind": "multi_krum"}})");
    CHECK(config::echo(flat) == config::echo(nested));
    CHECK(flat.fl.N == 12);
}

TEST_CASE("diagnostics name the line") {
    try {
        config::parse("seed = 1\nfl.N = twenty\n", "exp.cfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("exp.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(config::parse("no.such.key = 1\n"), ConfigError);
    CHECK_THROWS_AS(config::parse("fl.N = 1\nfl.N = 2\n"), ConfigError);
    CHECK_THROWS_AS(config::parse("just words\n"), ConfigError);
}

TEST_CASE("cross-field validation") {
    const std::string half = error_of("fl.N = 10\nfl.M = 5\n");
    CHECK(half.find("M/N < 0.5") != std::string::npos);
    CHECK(error_of("attack.kind = dyn_opt\nattack.threat = T3\nfl.M = 2\n").find("not possible") != std::string::npos);
    CHECK_FALSE(error_of("dataset.q = 1.5\n").empty());
    CHECK_FALSE(error_of("defense.kind = bulyan\nfl.N = 8\nfl.M = 2\n").empty());
    CHECK_FALSE(error_of("defense.kind = nothing\n").empty());
    CHECK_FALSE(error_of("output.format = xml\n").empty());
    CHECK(error_of("fl.N = 10\nfl.M = 4\n").empty());
}

TEST_CASE("set and echo round trip") {
    auto cfg = config::parse("seed = 5\n");
    config::set(cfg, "fl.k", "3");
    CHECK(cfg.fl.k == 3);
    std::string text;
    for (const auto& [k, v] : config::echo(cfg)) {
        text += k + " = " + v + "\n";
    }
    CHECK(config::echo(config::parse(text)) == config::echo(cfg));
}

TEST_CASE("prepared data follows the config") {
    auto cfg = config::parse("fl.N = 8\ndataset.per_class = 20\ndataset.test_per_class = 5\n");
    const auto prep = config::prepare_data(cfg);
    CHECK(prep.clients.size() == 8);
    CHECK(prep.test.size() == 20);
    std::size_t total = 0;
    for (const auto& c : prep.clients) {
        total += c.size();
    }
    CHECK(total == 80);
    CHECK(prep.arch.widths == std::vector<std::size_t>{16, 32, 4});
}

}  // TEST_SUITE
