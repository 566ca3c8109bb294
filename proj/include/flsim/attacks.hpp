#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flsim/aggregator.hpp"
#include "flsim/matrix.hpp"

namespace flsim::flguard {
struct FLGuardAssets;
}

// Malicious-update generators. Model-poisoning attacks craft g_m = g_b + gamma * p
// from the benign rows the threat model lets them see.
namespace flsim::attacks {

enum class ThreatModel { t1 = 1, t2, t3, t4, t5 };
enum class Capability { model, data };

struct ThreatModelConfig {
    ThreatModel type = ThreatModel::t1;
    bool knows_benign_updates = true;
    bool knows_agr = true;
    Capability capability = Capability::model;

    static ThreatModelConfig of(ThreatModel type);
};

ThreatModel parse_threat_model(std::string_view name);
std::string to_string(ThreatModel t);

enum class AttackKind {
    none,
    sign_flip,
    lie,
    min_max,
    min_sum,
    stat_opt,
    dyn_opt,
    adaptive,
    static_label_flip,
    dynamic_label_flip,
};

AttackKind parse_attack_kind(std::string_view name);
std::string to_string(AttackKind kind);

enum class Perturbation { uv, sgn };
Perturbation parse_perturbation(std::string_view name);
std::string to_string(Perturbation p);

struct GammaSearch {
    double gamma_init = 10.0;
    double threshold = 1e-3;  // relative bracket width
    std::size_t max_iters = 60;
};

inline constexpr double kGammaFloor = 1e-6;

struct AttackSpec {
    AttackKind kind = AttackKind::none;
    Perturbation perturbation = Perturbation::sgn;
    GammaSearch search;
    double lie_z = 1.5;
};

/// Throws ConfigError for bad search parameters or an attack the threat model
/// cannot mount (AGR-aware attacks need T1/T2, other model poisoning T1-T4).
void validate(const AttackSpec& spec, ThreatModel threat);
bool is_legal(AttackKind kind, ThreatModel threat);
bool is_model_poisoning(AttackKind kind);
bool is_data_poisoning(AttackKind kind);

/// -g_b / ||g_b|| for the mean g_b of the rows. Zero mean throws DegenerateInputError.
std::vector<double> perturbation_uv(const UpdateMatrix& benign);
/// -sign(column mean), with sign(0) = 0.
std::vector<double> perturbation_sgn(const UpdateMatrix& benign);
std::vector<double> perturbation(const UpdateMatrix& benign, Perturbation kind);

/// mu + z * sigma per column (population standard deviation). Needs two rows.
UpdateVector lie_attack(const UpdateMatrix& benign, double z);

UpdateVector sign_flip(std::span<const double> own_update);

struct Crafted {
    UpdateVector g_m;
    double gamma = 0.0;
    bool degenerate = false;  // search found no accepted gamma above the floor
};

/// Largest gamma (doubling from gamma_init, then bisection) with
/// max_i ||g_m - g_i|| <= max_ij ||g_i - g_j||.
Crafted min_max_attack(const UpdateMatrix& benign, std::span<const double> p, const GammaSearch& search);
/// Same search with sum_i ||g_m - g_i||^2 <= max_i sum_j ||g_i - g_j||^2.
Crafted min_sum_attack(const UpdateMatrix& benign, std::span<const double> p, const GammaSearch& search);

/// Decides whether the server would accept malicious rows crafted with gamma.
using Acceptance = std::function<bool(double gamma)>;

/// Halves from gamma_init until accepted. Returns kGammaFloor (degenerate) if
/// nothing above the floor is accepted.
double stat_opt_gamma(const Acceptance& accept, const GammaSearch& search, bool* degenerate = nullptr);
/// Largest accepted gamma: gamma_init if accepted, else bracket by halving and
/// bisect until hi - lo <= threshold * lo. Never below the stat_opt result.
double dyn_opt_gamma(const Acceptance& accept, const GammaSearch& search, bool* degenerate = nullptr);

/// Rows the server would see: the visible benign rows followed by n_malicious copies of g_m.
UpdateMatrix with_malicious(const UpdateMatrix& benign, std::span<const double> g_m, std::size_t n_malicious);

/// Acceptance through an aggregator's probe. Vector-wise rules accept when any
/// malicious row is selected; dimension-wise rules accept when the aggregate
/// moves along p relative to the benign mean. A rule that cannot run on the
/// candidate matrix rejects.
Acceptance agr_acceptance(const Aggregator& agr, const UpdateMatrix& benign, std::span<const double> p,
                          std::size_t n_malicious);

Crafted stat_opt_attack(const UpdateMatrix& benign, const Acceptance& accept, std::span<const double> p,
                        const GammaSearch& search);
Crafted dyn_opt_attack(const UpdateMatrix& benign, const Acceptance& accept, std::span<const double> p,
                       const GammaSearch& search);

/// DYN-OPT against the FLGuard filter using the given assets; accepts when any
/// malicious row survives. Without assets every row is selected.
Crafted adaptive_flguard_attack(const UpdateMatrix& benign, const flguard::FLGuardAssets* assets,
                                std::span<const double> p, const GammaSearch& search, std::size_t n_malicious);

}  // namespace flsim::attacks
