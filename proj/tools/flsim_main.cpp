// flsim: run federated-learning experiments from a config file.
//
//   flsim run      --config exp.cfg [--out DIR] [--seed N] [--format csv|json|both]
//   flsim validate --config exp.cfg
//   flsim sweep    --config exp.cfg --axis q --values 0.25,0.5
//   flsim oracle   trimmed-mean fixture.json
//
// Exit status: 0 success, 1 runtime failure, 2 invalid configuration or usage.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flsim/config.hpp"
#include "flsim/error.hpp"
#include "flsim/kernels.hpp"
#include "flsim/metrics.hpp"
#include "flsim/oracle.hpp"

namespace {

namespace fs = std::filesystem;
using flsim::ConfigError;

struct Common {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::string format;
};

flsim::config::ExperimentConfig load_config(const Common& c) {
    auto cfg = flsim::config::load(c.config_path);
    if (c.seed) {
        cfg.seed = *c.seed;
    }
    if (!c.out_dir.empty()) {
        cfg.output.dir = c.out_dir;
    }
    if (!c.format.empty()) {
        cfg.output.format = c.format;
    }
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw flsim::Error("cannot write " + path.string());
    }
    out << text;
}

void write_report(const flsim::config::ExperimentConfig& cfg, const flsim::metrics::ExperimentReport& report) {
    const fs::path dir = cfg.output.dir;
    fs::create_directories(dir);
    if (cfg.output.format != "json") {
        std::ostringstream csv;
        flsim::metrics::write_csv(csv, report);
        write_file(dir / "report.csv", csv.str());
    }
    if (cfg.output.format != "csv") {
        write_file(dir / "report.json", flsim::metrics::to_json(report) + "\n");
    }
}

void print_summary(const flsim::metrics::ExperimentReport& r) {
    std::printf("rounds=%zu initial_acc=%.4f final_acc=%.4f tail_mean=%.4f tail_std=%.4f training_events=%zu\n",
                r.rounds.size(), r.initial_accuracy, r.final_accuracy, r.tail_mean_accuracy, r.tail_std_accuracy,
                r.training_events);
}

int cmd_run(const Common& c) {
    const auto cfg = load_config(c);
    flsim::config::validate(cfg);
    const auto report = flsim::config::run(cfg);
    write_report(cfg, report);
    print_summary(report);
    return 0;
}

int cmd_validate(const Common& c) {
    const auto cfg = load_config(c);
    flsim::config::validate(cfg);
    std::printf("%s: ok\n", c.config_path.c_str());
    return 0;
}

int cmd_sweep(const Common& c, const std::string& axis, const std::vector<std::string>& values) {
    if (values.empty()) {
        throw ConfigError("sweep: empty value list");
    }
    if (axis != "malicious_fraction" && axis != "q" && axis != "k") {
        throw ConfigError("sweep: axis must be malicious_fraction, q or k (got '" + axis + "')");
    }
    const auto base = load_config(c);
    std::vector<flsim::config::ExperimentConfig> runs;
    for (const auto& v : values) {
        auto cfg = base;
        if (axis == "malicious_fraction") {
            double frac = 0.0;
            try {
                frac = std::stod(v);
            } catch (const std::exception&) {
                throw ConfigError("sweep: bad malicious_fraction '" + v + "'");
            }
            const auto m = static_cast<std::size_t>(std::llround(frac * static_cast<double>(cfg.fl.N)));
            flsim::config::set(cfg, "fl.M", std::to_string(m));
        } else {
            flsim::config::set(cfg, axis == "q" ? "dataset.q" : "fl.k", v);
        }
        flsim::config::validate(cfg);
        runs.push_back(std::move(cfg));
    }
    std::ostringstream csv;
    csv << axis << ',' << flsim::metrics::kCsvHeader << '\n';
    nlohmann::ordered_json all = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto report = flsim::config::run(runs[i]);
        for (const auto& r : report.rounds) {
            csv << values[i] << ',' << flsim::metrics::csv_row(r) << '\n';
        }
        all.push_back({{"axis", axis},
                       {"value", values[i]},
                       {"report", nlohmann::ordered_json::parse(flsim::metrics::to_json(report))}});
        std::printf("%s=%s ", axis.c_str(), values[i].c_str());
        print_summary(report);
    }
    const fs::path dir = base.output.dir;
    fs::create_directories(dir);
    if (base.output.format != "json") {
        write_file(dir / "sweep.csv", csv.str());
    }
    if (base.output.format != "csv") {
        write_file(dir / "sweep.json", all.dump(2) + "\n");
    }
    return 0;
}

// ---- oracle ---------------------------------------------------------------

flsim::oracle::Rows rows_of(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) {
        throw ConfigError(std::string("fixture is missing '") + key + "'");
    }
    return j.at(key).get<flsim::oracle::Rows>();
}

int cmd_oracle(const std::string& sub, const std::string& fixture_path) {
    std::ifstream in(fixture_path);
    if (!in) {
        throw ConfigError("cannot read fixture " + fixture_path);
    }
    nlohmann::json fx;
    try {
        fx = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("fixture " + fixture_path + ": " + e.what());
    }
    nlohmann::ordered_json out;
    if (sub == "trimmed-mean") {
        out["result"] = flsim::oracle::trimmed_mean(rows_of(fx, "rows"), fx.value("m", std::size_t{0}));
    } else if (sub == "krum-score") {
        out["scores"] = flsim::oracle::krum_scores(rows_of(fx, "rows"), fx.value("M", std::size_t{0}));
    } else if (sub == "multi-krum" || sub == "bulyan") {
        const auto rows = rows_of(fx, "rows");
        const std::size_t m = fx.value("M", std::size_t{0});
        const auto sel = sub == "bulyan" ? flsim::oracle::bulyan(rows, m) : flsim::oracle::multi_krum(rows, m);
        out["selected"] = sel.selected;
        out["aggregate"] = sel.aggregate;
    } else if (sub == "ahc") {
        const auto [a, b] = flsim::oracle::single_linkage_two(rows_of(fx, "points"));
        out["clusters"] = {a, b};
    } else if (sub == "nt-xent") {
        out["loss"] = flsim::oracle::nt_xent(rows_of(fx, "z"), fx.value("tau", 1.0));
    } else {
        throw ConfigError("unknown oracle '" + sub + "' (expected trimmed-mean, krum-score, multi-krum, bulyan, ahc, nt-xent)");
    }
    std::cout << out.dump() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    flsim::kernels::configure_threads();
    CLI::App app{"Federated-learning poisoning and defense simulator"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub, bool outputs) {
        sub->add_option("--config", common.config_path, "experiment config file")->required();
        if (outputs) {
            sub->add_option("--out", common.out_dir, "output directory (overrides output.dir)");
            sub->add_option("--seed", common.seed, "top-level seed (overrides the file)");
            sub->add_option("--format", common.format, "report format")->check(CLI::IsMember({"csv", "json", "both"}));
        }
    };
    auto* run = app.add_subcommand("run", "run one experiment");
    add_common(run, true);
    auto* validate = app.add_subcommand("validate", "check a config without running it");
    add_common(validate, false);
    auto* sweep = app.add_subcommand("sweep", "run one experiment per axis value");
    add_common(sweep, true);
    std::string axis;
    std::vector<std::string> values;
    sweep->add_option("--axis", axis, "malicious_fraction, q or k")->required();
    sweep->add_option("--values", values, "comma-separated axis values")->delimiter(',');
    auto* oracle = app.add_subcommand("oracle", "print a brute-force reference result as JSON");
    std::string oracle_name;
    std::string fixture;
    oracle->add_option("name", oracle_name, "trimmed-mean | krum-score | multi-krum | bulyan | ahc | nt-xent")
        ->required();
    oracle->add_option("fixture", fixture, "JSON fixture file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) return cmd_run(common);
        if (*validate) return cmd_validate(common);
        if (*sweep) return cmd_sweep(common, axis, values);
        if (*oracle) return cmd_oracle(oracle_name, fixture);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: bad fixture: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
