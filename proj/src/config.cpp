#include "flsim/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "flsim/error.hpp"

namespace flsim::config {

namespace {

std::string_view trim(std::string_view s) {
    const auto not_space = [](char c) { return c != ' ' && c != '\t' && c != '\r' && c != '\n'; };
    while (!s.empty() && !not_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && !not_space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

std::uint64_t to_u64(std::string_view v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("expected a non-negative integer, got '" + std::string(v) + "'");
    }
    return out;
}

std::size_t to_size(std::string_view v) { return static_cast<std::size_t>(to_u64(v)); }

double to_double(std::string_view v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError("expected a number, got '" + std::string(v) + "'");
    }
    return out;
}

bool to_bool(std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::size_t> to_sizes(std::string_view v) {
    std::vector<std::size_t> out;
    v = trim(v);
    if (!v.empty() && v.front() == '[' && v.back() == ']') {
        v = v.substr(1, v.size() - 2);
    }
    while (!trim(v).empty()) {
        const auto comma = v.find(',');
        out.push_back(to_size(trim(v.substr(0, comma))));
        if (comma == std::string_view::npos) {
            break;
        }
        v.remove_prefix(comma + 1);
    }
    return out;
}

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

template <typename T>
std::string fmt_int(T x) {
    return std::to_string(x);
}

std::string fmt_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += (i ? "," : "") + std::to_string(v[i]);
    }
    return s;
}

struct Key {
    const char* name;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define FLSIM_SIZE_KEY(name, field)                                                            \
    Key {                                                                                      \
        name, [](ExperimentConfig& c, std::string_view v) { c.field = to_size(v); },           \
            [](const ExperimentConfig& c) { return fmt_int(c.field); }                         \
    }
#define FLSIM_DOUBLE_KEY(name, field)                                                          \
    Key {                                                                                      \
        name, [](ExperimentConfig& c, std::string_view v) { c.field = to_double(v); },         \
            [](const ExperimentConfig& c) { return fmt(c.field); }                             \
    }
#define FLSIM_STRING_KEY(name, field)                                                          \
    Key {                                                                                      \
        name, [](ExperimentConfig& c, std::string_view v) { c.field = std::string(v); },       \
            [](const ExperimentConfig& c) { return c.field; }                                  \
    }

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        Key{"seed", [](ExperimentConfig& c, std::string_view v) { c.seed = to_u64(v); },
            [](const ExperimentConfig& c) { return fmt_int(c.seed); }},
        FLSIM_STRING_KEY("dataset.kind", dataset.kind),
        Key{"dataset.classes", [](ExperimentConfig& c, std::string_view v) { c.dataset.classes = static_cast<int>(to_size(v)); },
            [](const ExperimentConfig& c) { return fmt_int(c.dataset.classes); }},
        FLSIM_SIZE_KEY("dataset.dim", dataset.dim),
        FLSIM_SIZE_KEY("dataset.per_class", dataset.per_class),
        FLSIM_SIZE_KEY("dataset.test_per_class", dataset.test_per_class),
        FLSIM_DOUBLE_KEY("dataset.spread", dataset.spread),
        Key{"dataset.q",
            [](ExperimentConfig& c, std::string_view v) {
                if (v == "iid") {
                    c.dataset.q.reset();
                } else {
                    c.dataset.q = to_double(v);
                }
            },
            [](const ExperimentConfig& c) { return c.dataset.q ? fmt(*c.dataset.q) : std::string("iid"); }},
        FLSIM_STRING_KEY("dataset.train_images", dataset.train_images),
        FLSIM_STRING_KEY("dataset.train_labels", dataset.train_labels),
        FLSIM_STRING_KEY("dataset.test_images", dataset.test_images),
        FLSIM_STRING_KEY("dataset.test_labels", dataset.test_labels),
        FLSIM_SIZE_KEY("dataset.limit", dataset.limit),
        Key{"model.hidden", [](ExperimentConfig& c, std::string_view v) { c.model.hidden = to_sizes(v); },
            [](const ExperimentConfig& c) { return fmt_sizes(c.model.hidden); }},
        FLSIM_DOUBLE_KEY("model.alpha", model.alpha),
        FLSIM_SIZE_KEY("fl.R", fl.R),
        FLSIM_SIZE_KEY("fl.N", fl.N),
        FLSIM_SIZE_KEY("fl.M", fl.M),
        Key{"fl.P", [](ExperimentConfig& c, std::string_view v) { c.participants = to_size(v); },
            [](const ExperimentConfig& c) { return fmt_int(c.participants.value_or(c.fl.N)); }},
        FLSIM_SIZE_KEY("fl.I", fl.I),
        FLSIM_SIZE_KEY("fl.b", fl.b),
        FLSIM_DOUBLE_KEY("fl.eta", fl.eta),
        FLSIM_DOUBLE_KEY("fl.alpha", fl.alpha),
        FLSIM_SIZE_KEY("fl.k", fl.k),
        Key{"attack.kind",
            [](ExperimentConfig& c, std::string_view v) { c.attack.spec.kind = attacks::parse_attack_kind(v); },
            [](const ExperimentConfig& c) { return attacks::to_string(c.attack.spec.kind); }},
        Key{"attack.threat",
            [](ExperimentConfig& c, std::string_view v) { c.attack.threat = attacks::parse_threat_model(v); },
            [](const ExperimentConfig& c) { return attacks::to_string(c.attack.threat); }},
        Key{"attack.perturbation",
            [](ExperimentConfig& c, std::string_view v) { c.attack.spec.perturbation = attacks::parse_perturbation(v); },
            [](const ExperimentConfig& c) { return attacks::to_string(c.attack.spec.perturbation); }},
        FLSIM_DOUBLE_KEY("attack.gamma_init", attack.spec.search.gamma_init),
        FLSIM_DOUBLE_KEY("attack.threshold", attack.spec.search.threshold),
        FLSIM_SIZE_KEY("attack.max_iters", attack.spec.search.max_iters),
        FLSIM_DOUBLE_KEY("attack.lie_z", attack.spec.lie_z),
        FLSIM_SIZE_KEY("attack.surrogate_steps", attack.surrogate_steps),
        FLSIM_STRING_KEY("defense.kind", defense.kind),
        Key{"defense.m", [](ExperimentConfig& c, std::string_view v) { c.defense.m = to_size(v); },
            [](const ExperimentConfig& c) { return fmt_int(c.defense.m.value_or(c.fl.M)); }},
        Key{"defense.M", [](ExperimentConfig& c, std::string_view v) { c.defense.m_assumed = to_size(v); },
            [](const ExperimentConfig& c) { return fmt_int(c.defense.m_assumed.value_or(c.fl.M)); }},
        FLSIM_DOUBLE_KEY("defense.e", defense.dnc.e),
        FLSIM_SIZE_KEY("defense.iters", defense.dnc.iters),
        FLSIM_SIZE_KEY("defense.subdim", defense.dnc.subdim),
        FLSIM_SIZE_KEY("defense.root_size", defense.root_size),
        FLSIM_SIZE_KEY("defense.fltrust_iters", defense.fltrust.local_iters),
        FLSIM_SIZE_KEY("defense.fltrust_batch", defense.fltrust.batch),
        FLSIM_DOUBLE_KEY("defense.fltrust_lr", defense.fltrust.lr),
        FLSIM_DOUBLE_KEY("flguard.tau", defense.flguard.tau),
        FLSIM_DOUBLE_KEY("flguard.noise_var", defense.flguard.noise_var),
        FLSIM_DOUBLE_KEY("flguard.mask_ratio", defense.flguard.mask_ratio),
        FLSIM_DOUBLE_KEY("flguard.lr", defense.flguard.lr),
        FLSIM_SIZE_KEY("flguard.epochs", defense.flguard.epochs),
        FLSIM_SIZE_KEY("flguard.batch", defense.flguard.batch),
        FLSIM_SIZE_KEY("flguard.pca_components", defense.flguard.pca_components),
        FLSIM_SIZE_KEY("flguard.n_clusters", defense.flguard.n_clusters),
        FLSIM_SIZE_KEY("flguard.width", defense.flguard.width),
        FLSIM_DOUBLE_KEY("flguard.leaky_alpha", defense.flguard.leaky_alpha),
        FLSIM_STRING_KEY("output.dir", output.dir),
        FLSIM_STRING_KEY("output.format", output.format),
        Key{"output.record_timing", [](ExperimentConfig& c, std::string_view v) { c.output.record_timing = to_bool(v); },
            [](const ExperimentConfig& c) { return std::string(c.output.record_timing ? "true" : "false"); }},
    };
    return table;
}

#undef FLSIM_SIZE_KEY
#undef FLSIM_DOUBLE_KEY
#undef FLSIM_STRING_KEY

void flatten_json(const nlohmann::json& j, const std::string& prefix,
                  std::vector<std::pair<std::string, std::string>>& out) {
    for (const auto& [k, v] : j.items()) {
        const std::string key = prefix.empty() ? k : prefix + "." + k;
        if (v.is_object()) {
            flatten_json(v, key, out);
        } else if (v.is_string()) {
            out.emplace_back(key, v.get<std::string>());
        } else if (v.is_array()) {
            std::string s;
            for (const auto& e : v) {
                s += (s.empty() ? "" : ",") + (e.is_string() ? e.get<std::string>() : e.dump());
            }
            out.emplace_back(key, s);
        } else if (v.is_number_float()) {
            out.emplace_back(key, fmt(v.get<double>()));
        } else {
            out.emplace_back(key, v.dump());
        }
    }
}

}  // namespace

void set(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
    for (const auto& k : keys()) {
        if (key == k.name) {
            try {
                k.set(cfg, trim(value));
            } catch (const ConfigError& e) {
                throw ConfigError(std::string(key) + ": " + e.what());
            }
            return;
        }
    }
    throw ConfigError("unknown key '" + std::string(key) + "'");
}

ExperimentConfig parse(std::string_view text, const std::string& origin) {
    ExperimentConfig cfg;
    const std::string_view body = trim(text);
    if (!body.empty() && body.front() == '{') {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(origin + ": invalid JSON at byte " + std::to_string(e.byte) + ": " + e.what());
        }
        std::vector<std::pair<std::string, std::string>> flat;
        flatten_json(j, "", flat);
        for (const auto& [k, v] : flat) {
            try {
                set(cfg, k, v);
            } catch (const ConfigError& e) {
                throw ConfigError(origin + ": " + e.what());
            }
        }
        return cfg;
    }
    std::map<std::string, std::size_t> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const std::string where = origin + ":" + std::to_string(line_no) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(where + "expected 'key = value'");
        }
        const std::string key(trim(line.substr(0, eq)));
        if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
            throw ConfigError(where + "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) +
                              ")");
        }
        try {
            set(cfg, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return cfg;
}

ExperimentConfig load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

federation::FLConfig fl_config(const ExperimentConfig& cfg) {
    federation::FLConfig fl = cfg.fl;
    fl.P = cfg.participants.value_or(fl.N);
    fl.seed = cfg.seed;
    return fl;
}

void validate(const ExperimentConfig& cfg) {
    federation::validate(fl_config(cfg));
    attacks::validate(cfg.attack.spec, cfg.attack.threat);
    flguard::validate(cfg.defense.flguard);
    const auto& ds = cfg.dataset;
    if (ds.kind == "synth") {
        if (ds.classes < 2 || ds.dim < 1 || ds.per_class < 1 || ds.test_per_class < 1) {
            throw ConfigError("dataset: synth needs classes >= 2 and positive dim, per_class, test_per_class");
        }
        if (!(ds.spread >= 0.0)) {
            throw ConfigError("dataset.spread must be non-negative");
        }
    } else if (ds.kind == "idx") {
        if (ds.train_images.empty() || ds.train_labels.empty() || ds.test_images.empty() || ds.test_labels.empty()) {
            throw ConfigError("dataset: idx needs train_images, train_labels, test_images and test_labels");
        }
    } else {
        throw ConfigError("dataset.kind must be synth or idx, got '" + ds.kind + "'");
    }
    if (ds.q && !(*ds.q > 0.0 && *ds.q <= 1.0)) {
        throw ConfigError("dataset.q must lie in (0, 1]");
    }
    if (cfg.model.hidden.empty() || std::count(cfg.model.hidden.begin(), cfg.model.hidden.end(), 0U) > 0) {
        throw ConfigError("model.hidden must list positive layer widths");
    }
    static const char* kDefenses[] = {"fedavg", "trimmed_mean", "multi_krum", "bulyan", "dnc", "fltrust", "flguard"};
    if (std::find(std::begin(kDefenses), std::end(kDefenses), cfg.defense.kind) == std::end(kDefenses)) {
        throw ConfigError("unknown defense.kind '" + cfg.defense.kind + "'");
    }
    const std::size_t p = cfg.participants.value_or(cfg.fl.N);
    const std::size_t m = cfg.defense.m.value_or(cfg.fl.M);
    const std::size_t big_m = cfg.defense.m_assumed.value_or(cfg.fl.M);
    if (cfg.defense.kind == "trimmed_mean" && p <= 2 * m) {
        throw ConfigError("trimmed_mean needs P > 2m (P = " + std::to_string(p) + ", m = " + std::to_string(m) + ")");
    }
    if (cfg.defense.kind == "multi_krum" && p < 2 * big_m + 4) {
        throw ConfigError("multi_krum needs P >= 2M + 4 (P = " + std::to_string(p) + ", M = " + std::to_string(big_m) + ")");
    }
    if (cfg.defense.kind == "bulyan" && p <= 4 * big_m) {
        throw ConfigError("bulyan needs P > 4M (P = " + std::to_string(p) + ", M = " + std::to_string(big_m) + ")");
    }
    if (cfg.defense.kind == "dnc" && !(cfg.defense.dnc.e > 0.0)) {
        throw ConfigError("defense.e must be positive");
    }
    if (cfg.defense.kind == "fltrust" && cfg.defense.root_size < 1) {
        throw ConfigError("defense.root_size must be positive");
    }
    if (cfg.output.format != "csv" && cfg.output.format != "json" && cfg.output.format != "both") {
        throw ConfigError("output.format must be csv, json or both");
    }
}

std::vector<std::pair<std::string, std::string>> echo(const ExperimentConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : keys()) {
        out.emplace_back(k.name, k.get(cfg));
    }
    return out;
}

Prepared prepare_data(const ExperimentConfig& cfg) {
    Prepared p;
    const auto& ds = cfg.dataset;
    if (ds.kind == "synth") {
        const data::Dataset all = data::synth_dataset(ds.classes, ds.dim, ds.per_class + ds.test_per_class,
                                                      ds.spread, cfg.seed);
        const double frac =
            static_cast<double>(ds.test_per_class) / static_cast<double>(ds.per_class + ds.test_per_class);
        data::Split split = data::holdout_split(all, frac, cfg.seed);
        p.train = std::move(split.train);
        p.test = std::move(split.test);
    } else {
        p.train = data::load_idx(ds.train_images, ds.train_labels);
        p.test = data::load_idx(ds.test_images, ds.test_labels);
        const int classes = std::max(p.train.n_classes, p.test.n_classes);
        p.train.n_classes = classes;
        p.test.n_classes = classes;
    }
    if (ds.limit > 0 && ds.limit < p.train.size()) {
        std::vector<std::size_t> head(ds.limit);
        for (std::size_t i = 0; i < head.size(); ++i) {
            head[i] = i;
        }
        p.train = p.train.subset(head);
    }
    const double q = ds.q.value_or(1.0 / static_cast<double>(p.train.n_classes));
    p.clients = data::partition(p.train, data::PartitionConfig{cfg.fl.N, q, cfg.seed});
    std::vector<std::size_t> widths{p.train.features.cols()};
    widths.insert(widths.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
    widths.push_back(static_cast<std::size_t>(p.train.n_classes));
    p.arch = nn::Architecture::mlp(widths, cfg.model.alpha);
    return p;
}

std::unique_ptr<Aggregator> make_defense(const ExperimentConfig& cfg, const data::Dataset& train) {
    const std::size_t m = cfg.defense.m_assumed.value_or(cfg.fl.M);
    const std::string& kind = cfg.defense.kind;
    if (kind == "fedavg") return std::make_unique<FedAvg>();
    if (kind == "trimmed_mean") return std::make_unique<defenses::TrimmedMean>(cfg.defense.m.value_or(cfg.fl.M));
    if (kind == "multi_krum") return std::make_unique<defenses::MultiKrum>(m);
    if (kind == "bulyan") return std::make_unique<defenses::Bulyan>(m);
    if (kind == "dnc") return std::make_unique<defenses::Dnc>(m, cfg.defense.dnc, cfg.seed);
    if (kind == "fltrust") {
        Rng rng = Rng::derive(cfg.seed, "root");
        return std::make_unique<defenses::FLTrust>(data::sample_rows(train, cfg.defense.root_size, rng),
                                                   cfg.defense.fltrust, cfg.seed);
    }
    if (kind == "flguard") {
        return std::make_unique<flguard::FLGuard>(cfg.defense.flguard, cfg.fl.k, cfg.seed);
    }
    throw ConfigError("unknown defense.kind '" + kind + "'");
}

metrics::ExperimentReport run(const ExperimentConfig& cfg) {
    validate(cfg);
    Prepared p = prepare_data(cfg);
    auto defense = make_defense(cfg, p.train);
    federation::Simulation sim(fl_config(cfg), p.arch, std::move(p.clients), std::move(p.test), cfg.attack,
                               std::move(defense));
    sim.record_timing(cfg.output.record_timing);
    metrics::ExperimentReport report = sim.run();
    report.config = echo(cfg);
    return report;
}

}  // namespace flsim::config
