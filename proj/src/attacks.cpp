#include "flsim/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "flsim/error.hpp"
#include "flsim/flguard.hpp"
#include "flsim/kernels.hpp"

namespace flsim::attacks {

ThreatModelConfig ThreatModelConfig::of(ThreatModel type) {
    switch (type) {
        case ThreatModel::t1: return {type, true, true, Capability::model};
        case ThreatModel::t2: return {type, false, true, Capability::model};
        case ThreatModel::t3: return {type, true, false, Capability::model};
        case ThreatModel::t4: return {type, false, false, Capability::model};
        case ThreatModel::t5: return {type, false, false, Capability::data};
    }
    throw ConfigError("unknown threat model");
}

ThreatModel parse_threat_model(std::string_view name) {
    if (name == "T1" || name == "t1") return ThreatModel::t1;
    if (name == "T2" || name == "t2") return ThreatModel::t2;
    if (name == "T3" || name == "t3") return ThreatModel::t3;
    if (name == "T4" || name == "t4") return ThreatModel::t4;
    if (name == "T5" || name == "t5") return ThreatModel::t5;
    throw ConfigError("unknown threat model '" + std::string(name) + "' (expected T1..T5)");
}

std::string to_string(ThreatModel t) { return "T" + std::to_string(static_cast<int>(t)); }

namespace {

struct KindName {
    AttackKind kind;
    const char* name;
};

constexpr KindName kKindNames[] = {
    {AttackKind::none, "none"},           {AttackKind::sign_flip, "sf"},
    {AttackKind::lie, "lie"},             {AttackKind::min_max, "min_max"},
    {AttackKind::min_sum, "min_sum"},     {AttackKind::stat_opt, "stat_opt"},
    {AttackKind::dyn_opt, "dyn_opt"},     {AttackKind::adaptive, "adaptive"},
    {AttackKind::static_label_flip, "slf"}, {AttackKind::dynamic_label_flip, "dlf"},
};

}  // namespace

AttackKind parse_attack_kind(std::string_view name) {
    for (const auto& kn : kKindNames) {
        if (name == kn.name) {
            return kn.kind;
        }
    }
    std::string known;
    for (const auto& kn : kKindNames) {
        known += known.empty() ? "" : ", ";
        known += kn.name;
    }
    throw ConfigError("unknown attack kind '" + std::string(name) + "' (expected one of " + known + ")");
}

std::string to_string(AttackKind kind) {
    for (const auto& kn : kKindNames) {
        if (kn.kind == kind) {
            return kn.name;
        }
    }
    return "unknown";
}

Perturbation parse_perturbation(std::string_view name) {
    if (name == "uv") return Perturbation::uv;
    if (name == "sgn") return Perturbation::sgn;
    throw ConfigError("unknown perturbation '" + std::string(name) + "' (expected uv or sgn)");
}

std::string to_string(Perturbation p) { return p == Perturbation::uv ? "uv" : "sgn"; }

bool is_data_poisoning(AttackKind kind) {
    return kind == AttackKind::static_label_flip || kind == AttackKind::dynamic_label_flip;
}

bool is_model_poisoning(AttackKind kind) { return kind != AttackKind::none && !is_data_poisoning(kind); }

bool is_legal(AttackKind kind, ThreatModel threat) {
    const ThreatModelConfig t = ThreatModelConfig::of(threat);
    switch (kind) {
        case AttackKind::none:
        case AttackKind::static_label_flip:
        case AttackKind::dynamic_label_flip:
            return true;
        case AttackKind::stat_opt:
        case AttackKind::dyn_opt:
        case AttackKind::adaptive:
            return t.capability == Capability::model && t.knows_agr;
        default:
            return t.capability == Capability::model;
    }
}

void validate(const AttackSpec& spec, ThreatModel threat) {
    if (!(spec.search.gamma_init > 0.0)) {
        throw ConfigError("attack.gamma_init must be positive");
    }
    if (!(spec.search.threshold > 0.0)) {
        throw ConfigError("attack.threshold must be positive");
    }
    if (spec.search.max_iters < 1) {
        throw ConfigError("attack.max_iters must be at least 1");
    }
    if (!std::isfinite(spec.lie_z)) {
        throw ConfigError("attack.lie_z must be finite");
    }
    if (!is_legal(spec.kind, threat)) {
        throw ConfigError("attack '" + to_string(spec.kind) + "' is not possible under threat model " +
                          to_string(threat));
    }
}

// ---- perturbations ---------------------------------------------------------

std::vector<double> perturbation_uv(const UpdateMatrix& benign) {
    std::vector<double> p = fed_avg(benign);
    const double n = kernels::norm(p);
    if (!(n > 0.0)) {
        throw DegenerateInputError("inverse unit vector: benign mean is zero");
    }
    for (double& x : p) {
        x = -x / n;
    }
    return p;
}

std::vector<double> perturbation_sgn(const UpdateMatrix& benign) {
    std::vector<double> p = fed_avg(benign);
    for (double& x : p) {
        x = x > 0.0 ? -1.0 : (x < 0.0 ? 1.0 : 0.0);
    }
    return p;
}

std::vector<double> perturbation(const UpdateMatrix& benign, Perturbation kind) {
    return kind == Perturbation::uv ? perturbation_uv(benign) : perturbation_sgn(benign);
}

UpdateVector lie_attack(const UpdateMatrix& benign, double z) {
    if (benign.rows() < 2) {
        throw DegenerateInputError("LIE needs at least 2 visible rows");
    }
    UpdateVector g = kernels::column_mean(benign);
    const std::vector<double> var = kernels::column_variance(benign);
    for (std::size_t j = 0; j < g.size(); ++j) {
        g[j] += z * std::sqrt(var[j]);
    }
    return g;
}

UpdateVector sign_flip(std::span<const double> own_update) {
    UpdateVector g(own_update.begin(), own_update.end());
    for (double& x : g) {
        x = -x;
    }
    return g;
}

// ---- gamma search ----------------------------------------------------------

namespace {

UpdateVector shifted(std::span<const double> mu, std::span<const double> p, double gamma) {
    UpdateVector g(mu.begin(), mu.end());
    for (std::size_t j = 0; j < g.size(); ++j) {
        g[j] += gamma * p[j];
    }
    return g;
}

void check_direction(const UpdateMatrix& benign, std::span<const double> p) {
    if (benign.rows() < 1) {
        throw InputError("attack needs at least one visible benign row");
    }
    if (p.size() != benign.cols()) {
        throw InputError("perturbation length does not match the update dimension");
    }
}

// Largest gamma with feasible(gamma), assuming feasibility at 0: doubling from
// gamma_init, then bisection to relative width `threshold`.
double largest_feasible(const std::function<bool(double)>& feasible, const GammaSearch& s, bool* degenerate) {
    double lo = 0.0;
    double hi = s.gamma_init;
    std::size_t iters = 0;
    if (degenerate != nullptr) {
        *degenerate = false;
    }
    while (feasible(hi) && iters < s.max_iters) {
        lo = hi;
        hi *= 2.0;
        ++iters;
    }
    if (iters == s.max_iters) {
        return lo;
    }
    while (iters < s.max_iters && (lo == 0.0 || hi - lo > s.threshold * lo)) {
        const double mid = 0.5 * (lo + hi);
        (feasible(mid) ? lo : hi) = mid;
        ++iters;
    }
    if (degenerate != nullptr) {
        *degenerate = lo == 0.0;
    }
    return lo;
}

Crafted bounded_attack(const UpdateMatrix& benign, std::span<const double> p, const GammaSearch& search,
                       bool sum_of_squares) {
    check_direction(benign, p);
    const std::size_t n = benign.rows();
    const UpdateVector mu = fed_avg(benign);
    const Matrix dist = kernels::pairwise_sq_distances(benign);
    double bound = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row_sum += dist(i, j);
            if (!sum_of_squares) {
                bound = std::max(bound, dist(i, j));
            }
        }
        if (sum_of_squares) {
            bound = std::max(bound, row_sum);
        }
    }
    auto objective = [&](const UpdateVector& g) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double sq = 0.0;
            auto row = benign.row(i);
            for (std::size_t j = 0; j < g.size(); ++j) {
                sq += (g[j] - row[j]) * (g[j] - row[j]);
            }
            acc = sum_of_squares ? acc + sq : std::max(acc, sq);
        }
        return acc;
    };
    Crafted out;
    if (kernels::norm(p) == 0.0) {
        out.g_m = mu;
        return out;
    }
    out.gamma = largest_feasible([&](double gamma) { return objective(shifted(mu, p, gamma)) <= bound; }, search,
                                 &out.degenerate);
    out.g_m = shifted(mu, p, out.gamma);
    return out;
}

}  // namespace

Crafted min_max_attack(const UpdateMatrix& benign, std::span<const double> p, const GammaSearch& search) {
    return bounded_attack(benign, p, search, false);
}

Crafted min_sum_attack(const UpdateMatrix& benign, std::span<const double> p, const GammaSearch& search) {
    return bounded_attack(benign, p, search, true);
}

double stat_opt_gamma(const Acceptance& accept, const GammaSearch& search, bool* degenerate) {
    for (double gamma = search.gamma_init; gamma >= kGammaFloor; gamma *= 0.5) {
        if (accept(gamma)) {
            if (degenerate != nullptr) {
                *degenerate = false;
            }
            return gamma;
        }
    }
    if (degenerate != nullptr) {
        *degenerate = true;
    }
    return kGammaFloor;
}

double dyn_opt_gamma(const Acceptance& accept, const GammaSearch& search, bool* degenerate) {
    bool none = false;
    const double first = stat_opt_gamma(accept, search, &none);
    if (degenerate != nullptr) {
        *degenerate = none;
    }
    if (none || first == search.gamma_init) {
        return first;
    }
    double lo = first;
    double hi = 2.0 * first;
    for (std::size_t it = 0; it < search.max_iters && hi - lo > search.threshold * lo; ++it) {
        const double mid = 0.5 * (lo + hi);
        (accept(mid) ? lo : hi) = mid;
    }
    return lo;
}

UpdateMatrix with_malicious(const UpdateMatrix& benign, std::span<const double> g_m, std::size_t n_malicious) {
    UpdateMatrix all = benign;
    for (std::size_t i = 0; i < n_malicious; ++i) {
        all.push_row(g_m);
    }
    return all;
}

Acceptance agr_acceptance(const Aggregator& agr, const UpdateMatrix& benign, std::span<const double> p,
                          std::size_t n_malicious) {
    check_direction(benign, p);
    const UpdateVector mu = fed_avg(benign);
    const std::vector<double> dir(p.begin(), p.end());
    return [&agr, &benign, mu, dir, n_malicious](double gamma) {
        const UpdateMatrix candidate = with_malicious(benign, shifted(mu, dir, gamma), n_malicious);
        AggregationResult res;
        try {
            res = agr.probe(candidate);
        } catch (const Error&) {
            return false;
        }
        if (agr.vector_wise()) {
            return std::any_of(res.selected.begin(), res.selected.end(),
                               [&](std::size_t i) { return i >= benign.rows(); });
        }
        double moved = 0.0;
        for (std::size_t j = 0; j < dir.size(); ++j) {
            moved += (res.aggregate[j] - mu[j]) * dir[j];
        }
        return moved > 0.0;
    };
}

namespace {

Crafted opt_attack(const UpdateMatrix& benign, const Acceptance& accept, std::span<const double> p,
                   const GammaSearch& search, bool dynamic) {
    check_direction(benign, p);
    Crafted out;
    out.gamma = dynamic ? dyn_opt_gamma(accept, search, &out.degenerate)
                        : stat_opt_gamma(accept, search, &out.degenerate);
    out.g_m = shifted(fed_avg(benign), p, out.gamma);
    return out;
}

}  // namespace

Crafted stat_opt_attack(const UpdateMatrix& benign, const Acceptance& accept, std::span<const double> p,
                        const GammaSearch& search) {
    return opt_attack(benign, accept, p, search, false);
}

Crafted dyn_opt_attack(const UpdateMatrix& benign, const Acceptance& accept, std::span<const double> p,
                       const GammaSearch& search) {
    return opt_attack(benign, accept, p, search, true);
}

Crafted adaptive_flguard_attack(const UpdateMatrix& benign, const flguard::FLGuardAssets* assets,
                                std::span<const double> p, const GammaSearch& search, std::size_t n_malicious) {
    check_direction(benign, p);
    if (assets == nullptr) {
        Crafted out;
        out.gamma = search.gamma_init;
        out.g_m = shifted(fed_avg(benign), p, out.gamma);
        return out;
    }
    const UpdateVector mu = fed_avg(benign);
    const Acceptance accept = [&](double gamma) {
        const UpdateMatrix candidate = with_malicious(benign, shifted(mu, p, gamma), n_malicious);
        const flguard::FilterResult f = flguard::filter_clients(candidate, *assets);
        return std::any_of(f.c_good.begin(), f.c_good.end(), [&](std::size_t i) { return i >= benign.rows(); });
    };
    return dyn_opt_attack(benign, accept, p, search);
}

}  // namespace flsim::attacks
