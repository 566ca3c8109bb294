#include "flsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <json.hpp>

#include "flsim/error.hpp"

namespace flsim::metrics {

double evaluate_accuracy(const nn::Model& model, const data::Dataset& test) {
    if (test.empty()) {
        throw InputError("accuracy on an empty test set");
    }
    const std::vector<int> pred = nn::predict(model, test.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        correct += pred[i] == test.labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

FilteringScores filtering_scores(const std::vector<std::size_t>& selected,
                                 const std::vector<std::size_t>& participants,
                                 const std::vector<std::size_t>& malicious) {
    auto contains = [](const std::vector<std::size_t>& v, std::size_t x) {
        return std::find(v.begin(), v.end(), x) != v.end();
    };
    FilteringScores s;
    for (std::size_t id : participants) {
        const bool removed = !contains(selected, id);
        const bool bad = contains(malicious, id);
        if (removed && bad) {
            ++s.tp;
        } else if (removed) {
            ++s.fp;
        } else if (bad) {
            ++s.fn;
        } else {
            ++s.tn;
        }
    }
    const auto tp = static_cast<double>(s.tp);
    if (s.tp + s.fp > 0) {
        s.precision = tp / static_cast<double>(s.tp + s.fp);
    } else {
        s.precision = s.fn > 0 ? 0.0 : 1.0;
    }
    s.recall = s.tp + s.fn > 0 ? tp / static_cast<double>(s.tp + s.fn) : 1.0;
    const std::size_t denom = 2 * s.tp + s.fp + s.fn;
    if (denom == 0) {
        s.f1 = 1.0;
        s.f1_undefined = true;
    } else {
        s.f1 = 2.0 * tp / static_cast<double>(denom);
    }
    return s;
}

void ExperimentReport::finalize() {
    if (rounds.empty()) {
        final_accuracy = initial_accuracy;
        tail_mean_accuracy = initial_accuracy;
        tail_std_accuracy = 0.0;
        return;
    }
    final_accuracy = rounds.back().accuracy;
    const std::size_t tail = std::max<std::size_t>(1, (rounds.size() + 9) / 10);
    double sum = 0.0;
    for (std::size_t i = rounds.size() - tail; i < rounds.size(); ++i) {
        sum += rounds[i].accuracy;
    }
    tail_mean_accuracy = sum / static_cast<double>(tail);
    double sq = 0.0;
    for (std::size_t i = rounds.size() - tail; i < rounds.size(); ++i) {
        sq += (rounds[i].accuracy - tail_mean_accuracy) * (rounds[i].accuracy - tail_mean_accuracy);
    }
    tail_std_accuracy = std::sqrt(sq / static_cast<double>(tail));
}

double ExperimentReport::mean_f1(std::size_t first_round) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rounds) {
        if (r.round >= first_round) {
            sum += r.filtering.f1;
            ++n;
        }
    }
    return n > 0 ? sum / static_cast<double>(n) : 1.0;
}

std::string csv_row(const RoundReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%zu,%zu,%zu,%zu,%zu,%.6f,%d,%.3f", r.round, r.accuracy,
                  r.selected.size(), r.filtering.tp, r.filtering.fp, r.filtering.tn, r.filtering.fn, r.filtering.f1,
                  r.fallback_used ? 1 : 0, r.wall_ms);
    return buf;
}

void write_csv(std::ostream& out, const ExperimentReport& report) {
    out << kCsvHeader << '\n';
    for (const auto& r : report.rounds) {
        out << csv_row(r) << '\n';
    }
}

std::string to_json(const ExperimentReport& report) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.config) {
        cfg[k] = v;
    }
    j["config"] = cfg;
    j["initial_accuracy"] = report.initial_accuracy;
    j["final_accuracy"] = report.final_accuracy;
    j["tail_mean_accuracy"] = report.tail_mean_accuracy;
    j["tail_std_accuracy"] = report.tail_std_accuracy;
    j["training_events"] = report.training_events;
    nlohmann::ordered_json rounds = nlohmann::ordered_json::array();
    for (const auto& r : report.rounds) {
        nlohmann::ordered_json o;
        o["round"] = r.round;
        o["acc"] = r.accuracy;
        o["n_selected"] = r.selected.size();
        o["tp"] = r.filtering.tp;
        o["fp"] = r.filtering.fp;
        o["tn"] = r.filtering.tn;
        o["fn"] = r.filtering.fn;
        o["f1"] = r.filtering.f1;
        o["fallback"] = r.fallback_used;
        o["wall_ms"] = r.wall_ms;
        o["f1_undefined"] = r.filtering.f1_undefined;
        o["n_malicious"] = r.n_malicious;
        o["participants"] = r.participants;
        o["selected"] = r.selected;
        rounds.push_back(std::move(o));
    }
    j["rounds"] = std::move(rounds);
    return j.dump(2);
}

}  // namespace flsim::metrics
