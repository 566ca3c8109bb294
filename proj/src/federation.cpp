#include "flsim/federation.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <numeric>
#include <string>

#include "flsim/error.hpp"
#include "flsim/flguard.hpp"
#include "flsim/kernels.hpp"

namespace flsim::federation {

void validate(const FLConfig& cfg) {
    if (cfg.N < 1) {
        throw ConfigError("fl.N must be at least 1");
    }
    if (2 * cfg.M >= cfg.N) {
        throw ConfigError("fl.M = " + std::to_string(cfg.M) + " violates M/N < 0.5 for N = " + std::to_string(cfg.N));
    }
    if (cfg.P < 1 || cfg.P > cfg.N) {
        throw ConfigError("fl.P must satisfy 1 <= P <= N");
    }
    if (cfg.k < 1) {
        throw ConfigError("fl.k must be at least 1");
    }
    if (cfg.b < 1) {
        throw ConfigError("fl.b must be at least 1");
    }
    if (!(cfg.eta > 0.0) || !(cfg.alpha > 0.0)) {
        throw ConfigError("fl.eta and fl.alpha must be positive");
    }
}

UpdateVector local_update(const nn::Model& w, std::size_t iters, const data::Dataset& d, std::size_t b, double alpha,
                          Rng& rng) {
    if (d.empty()) {
        throw InputError("local update on an empty client dataset");
    }
    nn::Model local = w;
    const std::size_t n = d.size();
    std::vector<std::size_t> batch;
    for (std::size_t it = 0; it < iters; ++it) {
        if (b <= n) {
            batch = rng.sample_without_replacement(n, b);
        } else {
            batch.resize(b);
            for (auto& i : batch) {
                i = rng.below(n);
            }
        }
        const data::Dataset mb = d.subset(batch);
        const nn::LossAndGradient lg = nn::backward_cross_entropy(local, mb.features, mb.labels);
        nn::sgd_step_inplace(local, lg.grad, alpha);
    }
    UpdateVector delta = nn::flatten(local);
    const UpdateVector base = nn::flatten(w);
    for (std::size_t i = 0; i < delta.size(); ++i) {
        delta[i] -= base[i];
    }
    return delta;
}

void apply_global_update(nn::Model& w, std::span<const double> g, double eta) {
    UpdateVector flat = nn::flatten(w);
    if (g.size() != flat.size()) {
        throw ConfigError("global update has dimension " + std::to_string(g.size()) + ", model has " +
                          std::to_string(flat.size()));
    }
    for (std::size_t i = 0; i < flat.size(); ++i) {
        flat[i] += eta * g[i];
    }
    nn::assign_flat(w, flat);
}

nn::Model apply_global_update(const nn::Model& w, std::span<const double> g, double eta) {
    nn::Model out = w;
    apply_global_update(out, g, eta);
    return out;
}

namespace {

bool contains(const std::vector<std::size_t>& v, std::size_t x) { return std::binary_search(v.begin(), v.end(), x); }

}  // namespace

Simulation::Simulation(FLConfig cfg, const nn::Architecture& arch, std::vector<data::Dataset> clients,
                       data::Dataset test, AttackSetup attack, std::unique_ptr<Aggregator> defense)
    : cfg_(cfg),
      clients_(std::move(clients)),
      test_(std::move(test)),
      attack_(attack),
      defense_(std::move(defense)) {
    validate(cfg_);
    attacks::validate(attack_.spec, attack_.threat);
    if (clients_.size() != cfg_.N) {
        throw ConfigError("expected " + std::to_string(cfg_.N) + " client datasets, got " +
                          std::to_string(clients_.size()));
    }
    if (!defense_) {
        throw ConfigError("no aggregation rule configured");
    }
    nn::validate(arch);
    Rng init = Rng::derive(cfg_.seed, "init");
    model_ = nn::init_model(arch, init);
    Rng pick = Rng::derive(cfg_.seed, "attack");
    malicious_ = pick.sample_without_replacement(cfg_.N, cfg_.M);
    std::sort(malicious_.begin(), malicious_.end());
    poison_data();
}

void Simulation::poison_data() {
    using attacks::AttackKind;
    if (attack_.spec.kind == AttackKind::static_label_flip) {
        for (std::size_t id : malicious_) {
            clients_[id] = data::static_label_flip(std::move(clients_[id]));
        }
    } else if (attack_.spec.kind == AttackKind::dynamic_label_flip && !malicious_.empty()) {
        data::Dataset pooled;
        for (std::size_t id : malicious_) {
            const auto& c = clients_[id];
            for (std::size_t i = 0; i < c.size(); ++i) {
                pooled.features.push_row(c.features.row(i));
                pooled.labels.push_back(c.labels[i]);
            }
            pooled.n_classes = c.n_classes;
        }
        nn::Model surrogate = model_;
        if (!pooled.empty()) {
            Rng rng = Rng::derive(cfg_.seed, "surrogate");
            const UpdateVector delta = local_update(surrogate, attack_.surrogate_steps, pooled, cfg_.b, cfg_.alpha, rng);
            apply_global_update(surrogate, delta, 1.0);
        }
        for (std::size_t id : malicious_) {
            clients_[id] = data::dynamic_label_flip(std::move(clients_[id]), surrogate);
        }
    }
}

std::vector<std::size_t> Simulation::sample_participants() const {
    std::vector<std::size_t> ids;
    if (cfg_.P == cfg_.N) {
        ids.resize(cfg_.N);
        std::iota(ids.begin(), ids.end(), 0);
        return ids;
    }
    Rng rng = Rng::derive(cfg_.seed, "participation", {round_});
    ids = rng.sample_without_replacement(cfg_.N, cfg_.P);
    std::sort(ids.begin(), ids.end());
    return ids;
}

void Simulation::craft(UpdateMatrix& g, const std::vector<std::size_t>& participants) const {
    using attacks::AttackKind;
    const AttackKind kind = attack_.spec.kind;
    if (!attacks::is_model_poisoning(kind)) {
        return;
    }
    std::vector<std::size_t> bad_rows;
    std::vector<std::size_t> good_rows;
    for (std::size_t r = 0; r < participants.size(); ++r) {
        (contains(malicious_, participants[r]) ? bad_rows : good_rows).push_back(r);
    }
    if (bad_rows.empty()) {
        return;
    }
    if (kind == AttackKind::sign_flip) {
        for (std::size_t r : bad_rows) {
            const UpdateVector flipped = attacks::sign_flip(g.row(r));
            std::copy(flipped.begin(), flipped.end(), g.row(r).begin());
        }
        return;
    }

    const auto threat = attacks::ThreatModelConfig::of(attack_.threat);
    const std::vector<std::size_t>& seen = threat.knows_benign_updates && !good_rows.empty() ? good_rows : bad_rows;
    const UpdateMatrix visible = g.select_rows(seen);
    const auto& spec = attack_.spec;
    UpdateVector g_m;
    try {
        if (kind == AttackKind::lie) {
            g_m = attacks::lie_attack(visible, spec.lie_z);
        } else {
            const std::vector<double> p = attacks::perturbation(visible, spec.perturbation);
            attacks::Crafted c;
            switch (kind) {
                case AttackKind::min_max: c = attacks::min_max_attack(visible, p, spec.search); break;
                case AttackKind::min_sum: c = attacks::min_sum_attack(visible, p, spec.search); break;
                case AttackKind::stat_opt:
                    c = attacks::stat_opt_attack(visible, attacks::agr_acceptance(*defense_, visible, p, bad_rows.size()),
                                                 p, spec.search);
                    break;
                case AttackKind::dyn_opt:
                    c = attacks::dyn_opt_attack(visible, attacks::agr_acceptance(*defense_, visible, p, bad_rows.size()),
                                                p, spec.search);
                    break;
                case AttackKind::adaptive:
                    if (const auto* guard = dynamic_cast<const flguard::FLGuard*>(defense_.get())) {
                        const auto assets = guard->assets();
                        c = attacks::adaptive_flguard_attack(visible, assets.get(), p, spec.search, bad_rows.size());
                    } else {
                        c = attacks::dyn_opt_attack(
                            visible, attacks::agr_acceptance(*defense_, visible, p, bad_rows.size()), p, spec.search);
                    }
                    break;
                default: return;
            }
            if (c.degenerate) {
                std::cerr << "warning: round " << round_ << ": no accepted gamma, using the floor\n";
            }
            g_m = std::move(c.g_m);
        }
    } catch (const DegenerateInputError& e) {
        std::cerr << "warning: round " << round_ << ": attack skipped (" << e.what() << ")\n";
        return;
    }
    for (std::size_t r : bad_rows) {
        std::copy(g_m.begin(), g_m.end(), g.row(r).begin());
    }
}

metrics::RoundReport Simulation::step() {
    const auto start = std::chrono::steady_clock::now();
    ++round_;
    metrics::RoundReport report;
    report.round = round_;

    std::vector<std::size_t> participants;
    for (std::size_t id : sample_participants()) {
        if (clients_[id].empty()) {
            std::cerr << "warning: round " << round_ << ": client " << id << " has no data, skipped\n";
            continue;
        }
        participants.push_back(id);
    }
    if (participants.empty()) {
        throw AggregationError("round " + std::to_string(round_) + ": no participant has data");
    }
    defense_->begin_round(RoundContext{round_, &model_});

    const std::size_t d = model_.parameter_count();
    UpdateMatrix g(participants.size(), d);
    const auto n_part = static_cast<std::ptrdiff_t>(participants.size());
    // every client draws from its own (round, client) stream, so scheduling cannot change results
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < n_part; ++i) {
        const std::size_t id = participants[static_cast<std::size_t>(i)];
        Rng rng = Rng::derive(cfg_.seed, "local", {round_, id});
        const UpdateVector u = local_update(model_, cfg_.I, clients_[id], cfg_.b, cfg_.alpha, rng);
        std::copy(u.begin(), u.end(), g.row(static_cast<std::size_t>(i)).begin());
    }

    craft(g, participants);
    AggregationResult agg = defense_->aggregate(g);
    apply_global_update(model_, agg.aggregate, cfg_.eta);

    report.participants = participants;
    for (std::size_t r : agg.selected) {
        report.selected.push_back(participants[r]);
    }
    report.fallback_used = agg.fallback_used || agg.selected.empty();
    for (std::size_t id : participants) {
        report.n_malicious += contains(malicious_, id) ? 1 : 0;
    }
    report.filtering = metrics::filtering_scores(report.selected, participants, malicious_);
    report.accuracy = metrics::evaluate_accuracy(model_, test_);
    if (record_timing_) {
        report.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    last_updates_ = std::move(g);
    return report;
}

std::size_t Simulation::training_events() const {
    if (const auto* guard = dynamic_cast<const flguard::FLGuard*>(defense_.get())) {
        return guard->training_events();
    }
    return 0;
}

metrics::ExperimentReport Simulation::run() {
    metrics::ExperimentReport report;
    report.initial_accuracy = metrics::evaluate_accuracy(model_, test_);
    while (round_ < cfg_.R) {
        report.rounds.push_back(step());
    }
    report.training_events = training_events();
    report.finalize();
    return report;
}

metrics::ExperimentReport run_experiment(const FLConfig& cfg, const nn::Architecture& arch,
                                         std::vector<data::Dataset> clients, data::Dataset test,
                                         AttackSetup attack, std::unique_ptr<Aggregator> defense) {
    Simulation sim(cfg, arch, std::move(clients), std::move(test), attack, std::move(defense));
    return sim.run();
}

}  // namespace flsim::federation
