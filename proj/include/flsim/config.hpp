#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flsim/aggregator.hpp"
#include "flsim/data.hpp"
#include "flsim/defenses.hpp"
#include "flsim/federation.hpp"
#include "flsim/flguard.hpp"
#include "flsim/metrics.hpp"

// Experiment configuration. The file format is one `key = value` per line with
// dotted keys (`fl.N = 20`) and `#` comments; a JSON object with the same keys
// (flat or nested by section) is accepted too.
namespace flsim::config {

struct DatasetConfig {
    std::string kind = "synth";  // synth | idx
    int classes = 4;
    std::size_t dim = 16;
    std::size_t per_class = 300;
    std::size_t test_per_class = 100;
    double spread = 0.15;
    std::optional<double> q;  // unset: IID (1 / classes)
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
    std::size_t limit = 0;  // keep only the first `limit` training samples (0 = all)
};

struct ModelConfig {
    std::vector<std::size_t> hidden{32};
    double alpha = 0.01;
};

struct DefenseConfig {
    std::string kind = "fedavg";  // fedavg | trimmed_mean | multi_krum | bulyan | dnc | fltrust | flguard
    std::optional<std::size_t> m;          // trimmed-mean trim count; unset: fl.M
    std::optional<std::size_t> m_assumed;  // malicious count assumed by Krum, Bulyan, DnC; unset: fl.M
    defenses::DncParams dnc;
    defenses::FLTrustParams fltrust;
    std::size_t root_size = 100;
    flguard::Hyper flguard;
};

struct OutputConfig {
    std::string dir = "out";
    std::string format = "csv";  // csv | json | both
    bool record_timing = false;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    DatasetConfig dataset;
    ModelConfig model;
    federation::FLConfig fl;
    std::optional<std::size_t> participants;  // fl.P; unset: N
    federation::AttackSetup attack;
    DefenseConfig defense;
    OutputConfig output;
};

/// Parses config text. Diagnostics carry the origin and line number.
ExperimentConfig parse(std::string_view text, const std::string& origin = "<config>");
ExperimentConfig load(const std::filesystem::path& path);

/// Sets one dotted key from its textual value (used for overrides and sweeps).
void set(ExperimentConfig& cfg, std::string_view key, std::string_view value);

/// Cross-field checks (M < N/2, attack legal under the threat model, ...).
void validate(const ExperimentConfig& cfg);

/// Every key with its effective value, in a fixed order.
std::vector<std::pair<std::string, std::string>> echo(const ExperimentConfig& cfg);

/// Resolved FL parameters (P and seed filled in).
federation::FLConfig fl_config(const ExperimentConfig& cfg);

struct Prepared {
    nn::Architecture arch;
    data::Dataset train;
    std::vector<data::Dataset> clients;
    data::Dataset test;
};

Prepared prepare_data(const ExperimentConfig& cfg);
std::unique_ptr<Aggregator> make_defense(const ExperimentConfig& cfg, const data::Dataset& train);

/// Validates, builds and runs one experiment.
metrics::ExperimentReport run(const ExperimentConfig& cfg);

}  // namespace flsim::config
