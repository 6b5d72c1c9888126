#include "bao/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace bao {

RegretSample regret(double chosen, std::span<const double> per_arm_true) {
    if (per_arm_true.empty())
        throw std::invalid_argument("regret: empty per-arm performance vector");
    const double best = *std::min_element(per_arm_true.begin(), per_arm_true.end());
    RegretSample s;
    s.chosen_performance = chosen;
    s.optimal_performance = best;
    s.linear_regret = chosen - best;
    s.squared_regret = s.linear_regret * s.linear_regret;
    return s;
}

double q_error(double x, double y) {
    if (x <= 0.0 || y <= 0.0)
        throw std::invalid_argument("q_error: inputs must be positive");
    return std::max(x / y, y / x) - 1.0;
}

std::vector<double> percentiles(std::span<const double> values,
                                std::span<const double> ps) {
    if (values.empty()) throw std::invalid_argument("percentiles: empty input");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());

    std::vector<double> out;
    out.reserve(ps.size());
    const double n = static_cast<double>(sorted.size());
    for (double p : ps) {
        if (p < 0.0 || p > 1.0)
            throw std::invalid_argument("percentiles: p outside [0,1]");
        // nearest-rank: smallest value with at least ceil(p*n) values <= it
        std::size_t rank = static_cast<std::size_t>(std::ceil(p * n));
        if (rank < 1) rank = 1;
        out.push_back(sorted[rank - 1]);
    }
    return out;
}

std::vector<double> selection_frequency(std::span<const int> chosen_arms,
                                        int arm_id, int window) {
    if (window < 1) throw std::invalid_argument("selection_frequency: window must be >= 1");
    std::vector<double> out(chosen_arms.size());
    int hits = 0;
    for (std::size_t t = 0; t < chosen_arms.size(); ++t) {
        hits += chosen_arms[t] == arm_id ? 1 : 0;
        if (t >= static_cast<std::size_t>(window))
            hits -= chosen_arms[t - window] == arm_id ? 1 : 0;
        const std::size_t span = std::min<std::size_t>(t + 1, window);
        out[t] = static_cast<double>(hits) / static_cast<double>(span);
    }
    return out;
}

namespace {
std::ofstream open_csv(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.precision(17);
    return os;
}
}  // namespace

void write_regret_csv(const std::string& path, std::span<const RegretSample> samples) {
    auto os = open_csv(path);
    os << "query_id,chosen_performance,optimal_performance,linear_regret,squared_regret\n";
    for (const RegretSample& s : samples)
        os << s.query_id << ',' << s.chosen_performance << ',' << s.optimal_performance
           << ',' << s.linear_regret << ',' << s.squared_regret << '\n';
}

void write_percentile_csv(const std::string& path, std::span<const double> latencies,
                          std::span<const double> ps) {
    auto os = open_csv(path);
    os << "p,latency\n";
    const std::vector<double> values = percentiles(latencies, ps);
    for (std::size_t i = 0; i < ps.size(); ++i) os << ps[i] << ',' << values[i] << '\n';
}

void write_selection_frequency_csv(const std::string& path,
                                   std::span<const int> chosen_arms, int arm_count,
                                   int window) {
    auto os = open_csv(path);
    os << "query_index";
    for (int a = 0; a < arm_count; ++a) os << ",arm_" << a;
    os << '\n';
    std::vector<std::vector<double>> series;
    series.reserve(arm_count);
    for (int a = 0; a < arm_count; ++a)
        series.push_back(selection_frequency(chosen_arms, a, window));
    for (std::size_t t = 0; t < chosen_arms.size(); ++t) {
        os << t;
        for (int a = 0; a < arm_count; ++a) os << ',' << series[a][t];
        os << '\n';
    }
}

}  // namespace bao
