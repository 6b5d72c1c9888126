#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bao {

struct RegretSample {
    std::int64_t query_id = 0;
    double chosen_performance = 0.0;
    double optimal_performance = 0.0;
    double linear_regret = 0.0;   // chosen - optimal
    double squared_regret = 0.0;  // linear^2
};

// Regret of a chosen outcome against the per-arm true performances.
RegretSample regret(double chosen, std::span<const double> per_arm_true);

// Symmetric relative error: max(x/y, y/x) - 1. Inputs must be positive.
double q_error(double x, double y);

// Nearest-rank quantiles, one per requested p in [0,1].
std::vector<double> percentiles(std::span<const double> values,
                                std::span<const double> ps);

// Fraction of the trailing `window` choices equal to arm_id, one value per
// query. Entry t covers choices max(0, t-window+1)..t.
std::vector<double> selection_frequency(std::span<const int> chosen_arms,
                                        int arm_id, int window = 100);

// CSV emitters (column layouts documented in the README).
void write_regret_csv(const std::string& path, std::span<const RegretSample> samples);
void write_percentile_csv(const std::string& path, std::span<const double> latencies,
                          std::span<const double> ps);
void write_selection_frequency_csv(const std::string& path,
                                   std::span<const int> chosen_arms, int arm_count,
                                   int window = 100);

}  // namespace bao
