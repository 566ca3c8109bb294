#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "flsim/aggregator.hpp"
#include "flsim/attacks.hpp"
#include "flsim/data.hpp"
#include "flsim/metrics.hpp"
#include "flsim/nn.hpp"
#include "flsim/rng.hpp"

namespace flsim::federation {

struct FLConfig {
    std::size_t R = 60;    // rounds
    std::size_t N = 20;    // clients
    std::size_t M = 0;     // malicious clients
    std::size_t P = 20;    // participants per round
    std::size_t I = 1;     // local SGD steps
    std::size_t b = 32;    // local batch size
    double eta = 1.0;      // global learning rate
    double alpha = 0.1;    // local learning rate
    std::size_t k = 5;     // contrastive refresh interval
    std::uint64_t seed = 0;
};

/// Throws ConfigError naming the violated constraint.
void validate(const FLConfig& cfg);

/// I SGD steps from w on mini-batches of b samples (drawn without replacement,
/// or with replacement when b exceeds the dataset); returns flat(w_I) - flat(w).
/// An empty dataset throws InputError.
UpdateVector local_update(const nn::Model& w, std::size_t iters, const data::Dataset& d, std::size_t b, double alpha,
                          Rng& rng);

/// flat(w) + eta * g.
void apply_global_update(nn::Model& w, std::span<const double> g, double eta);
nn::Model apply_global_update(const nn::Model& w, std::span<const double> g, double eta);

struct AttackSetup {
    attacks::AttackSpec spec;
    attacks::ThreatModel threat = attacks::ThreatModel::t1;
    std::size_t surrogate_steps = 200;  // dynamic label flip surrogate training
};

/// One federated training run. Client data of malicious clients is poisoned at
/// construction for label-flip attacks; model-poisoning attacks act per round.
class Simulation {
public:
    Simulation(FLConfig cfg, const nn::Architecture& arch, std::vector<data::Dataset> clients, data::Dataset test,
               AttackSetup attack, std::unique_ptr<Aggregator> defense);

    /// Runs the next round and returns its report.
    metrics::RoundReport step();
    /// Runs every remaining round.
    metrics::ExperimentReport run();

    std::size_t round() const noexcept { return round_; }
    const nn::Model& model() const noexcept { return model_; }
    const std::vector<std::size_t>& malicious_ids() const noexcept { return malicious_; }
    const Aggregator& defense() const noexcept { return *defense_; }
    /// Number of contrastive refreshes so far (zero for other defenses).
    std::size_t training_events() const;
    /// When set, reports carry measured round wall time; otherwise 0.
    void record_timing(bool on) noexcept { record_timing_ = on; }
    /// Last round's crafted malicious rows (empty when no model poisoning happened).
    const UpdateMatrix& last_updates() const noexcept { return last_updates_; }

private:
    std::vector<std::size_t> sample_participants() const;
    void poison_data();
    void craft(UpdateMatrix& g, const std::vector<std::size_t>& participants) const;

    FLConfig cfg_;
    std::vector<data::Dataset> clients_;
    data::Dataset test_;
    AttackSetup attack_;
    std::unique_ptr<Aggregator> defense_;
    nn::Model model_;
    std::vector<std::size_t> malicious_;
    std::size_t round_ = 0;
    bool record_timing_ = false;
    UpdateMatrix last_updates_;
};

/// Convenience wrapper: builds a Simulation and runs all rounds.
metrics::ExperimentReport run_experiment(const FLConfig& cfg, const nn::Architecture& arch,
                                         std::vector<data::Dataset> clients, data::Dataset test,
                                         AttackSetup attack, std::unique_ptr<Aggregator> defense);

}  // namespace flsim::federation
