#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "flsim/data.hpp"
#include "flsim/nn.hpp"

namespace flsim::metrics {

/// Fraction of test samples whose argmax prediction matches the label.
double evaluate_accuracy(const nn::Model& model, const data::Dataset& test);

/// Confusion counts of the removal decision: a removed malicious client is a
/// true positive. When nothing is removed and nobody is malicious F1 is
/// undefined and reported as 1.0 with `f1_undefined` set.
struct FilteringScores {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
    double precision = 1.0;
    double recall = 1.0;
    double f1 = 1.0;
    bool f1_undefined = false;
};

/// `selected`, `participants` and `malicious` are client ids.
FilteringScores filtering_scores(const std::vector<std::size_t>& selected,
                                 const std::vector<std::size_t>& participants,
                                 const std::vector<std::size_t>& malicious);

struct RoundReport {
    std::size_t round = 0;
    double accuracy = 0.0;
    std::vector<std::size_t> participants;  // client ids
    std::vector<std::size_t> selected;      // client ids
    std::size_t n_malicious = 0;            // malicious participants this round
    FilteringScores filtering;
    bool fallback_used = false;
    double wall_ms = 0.0;
};

struct ExperimentReport {
    std::vector<std::pair<std::string, std::string>> config;  // echo, in key order
    double initial_accuracy = 0.0;
    std::vector<RoundReport> rounds;
    double final_accuracy = 0.0;
    double tail_mean_accuracy = 0.0;  // last 10% of rounds (at least one)
    double tail_std_accuracy = 0.0;   // population std over the same rounds
    std::size_t training_events = 0;

    /// Fills final/tail statistics from `rounds` (initial accuracy when empty).
    void finalize();
    /// Mean F1 over rounds >= first_round.
    double mean_f1(std::size_t first_round) const;
};

inline constexpr const char* kCsvHeader = "round,acc,n_selected,tp,fp,tn,fn,f1,fallback,wall_ms";

/// One CSV line per round (no trailing newline), without a header.
std::string csv_row(const RoundReport& r);
void write_csv(std::ostream& out, const ExperimentReport& report);
std::string to_json(const ExperimentReport& report);

}  // namespace flsim::metrics
