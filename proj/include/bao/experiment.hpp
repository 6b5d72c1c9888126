#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bao/bandit.hpp"
#include "bao/simenv.hpp"

namespace bao {

// Everything that determines one run. (config, seed) fully pins the outputs;
// the seed drives the noise and policy streams while env.seed pins the world.
struct ExperimentConfig {
    EnvConfig env;
    BanditConfig bandit;
    FeatureConfig features;  // trace replay featurization
    int horizon = 2000;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    PolicyMode mode = PolicyMode::steer;
    int fixed_arm_id = 0;
    bool save_checkpoints = true;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& config);

// "steer" | "fixed-arm:<id>" | "oracle" | "random"
void parse_mode(const std::string& text, ExperimentConfig& config);

struct RunSummary {
    std::size_t queries = 0;
    double total_performance = 0.0;
    double mean_linear_regret = 0.0;
    double median_linear_regret = 0.0;
    int retrain_count = 0;
    bool aborted = false;

    std::string one_line() const;
};

RunSummary summarize(const EpisodeLog& log);

// Runs the episode loop against the simulator and writes all artifacts
// (episode.jsonl, metric CSVs, checkpoints, summary.txt) under out_dir.
// Returns the run summary; the in-memory log is exposed for tests.
RunSummary run_experiment(const ExperimentConfig& config, EpisodeLog* log_out = nullptr);

// Same loop driven by a recorded trace instead of the simulator.
RunSummary replay_experiment(const std::string& trace_path, const ExperimentConfig& config,
                             EpisodeLog* log_out = nullptr);

// Regenerates metric CSVs and the summary from an existing episode log.
RunSummary report_experiment(const std::string& log_path, const std::string& out_dir);

struct BenchRow {
    std::size_t window = 0;
    double seconds = 0.0;
};

// Times train() on synthetic experience of each window size. Epoch count is
// fixed (convergence disabled) so the measured time isolates window scaling.
std::vector<BenchRow> bench_train(std::span<const std::size_t> windows,
                                  const TcnnDims& dims, int epochs, std::uint64_t seed);

void write_bench_csv(const std::string& path, std::span<const BenchRow> rows);

// Least-squares R^2 of seconds against window size.
double linear_fit_r2(std::span<const BenchRow> rows);

}  // namespace bao
