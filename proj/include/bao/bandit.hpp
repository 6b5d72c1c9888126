#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bao/env.hpp"
#include "bao/plan.hpp"
#include "bao/rng.hpp"
#include "bao/tcnn.hpp"

namespace bao {

// ---------------------------------------------------------------------------
// experience

struct ExperienceEntry {
    std::shared_ptr<const VectorTree> tree;
    double performance = 0.0;
    std::int64_t query_id = 0;
    int arm_id = 0;
    std::int64_t timestamp = 0;  // simulation clock at recording
};

// The k most recent (plan, observed performance) pairs, one per executed
// query. Entries are immutable once recorded.
class Experience {
public:
    explicit Experience(std::size_t window_k);

    std::size_t window_k() const { return window_k_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const ExperienceEntry& entry(std::size_t i) const { return entries_[i]; }

    // Appends one outcome and evicts the oldest entries beyond window_k.
    // Rejects negative performance.
    void record(std::shared_ptr<const VectorTree> tree, std::int64_t query_id,
                int arm_id, double performance, std::int64_t timestamp);

private:
    std::size_t window_k_;
    std::deque<ExperienceEntry> entries_;
};

// |E| entries drawn uniformly with replacement.
std::vector<const ExperienceEntry*> bootstrap_sample(const Experience& experience,
                                                     Rng& rng);

// ---------------------------------------------------------------------------
// arm selection

struct ArmChoice {
    int arm_id = 0;
    double predicted_performance = 0.0;   // min of all_predictions
    std::vector<double> all_predictions;  // performance units, per arm
};

// Runs the model on every candidate plan and returns the argmin predicted
// performance; ties go to the lowest arm id.
ArmChoice select_arm(const TcnnModel& model, std::span<const VectorTree> candidates);

// ---------------------------------------------------------------------------
// steering policy

struct BanditConfig {
    int retrain_every_n = 100;
    std::size_t window_k = 2000;

    enum class Exploration {
        thompson_bootstrap,  // retrain on a bootstrap resample of E
        greedy,              // retrain on E itself
    };
    Exploration exploration = Exploration::thompson_bootstrap;

    std::uint64_t rng_seed = 0;

    // Overlapped retraining: train on a worker thread against an immutable
    // experience snapshot; the new model is swapped in atomically right
    // before query (trigger + overlap_lag). Lag 0 is equivalent to
    // synchronous training.
    bool overlap_train = false;
    int overlap_lag = 1;

    TcnnDims dims;  // input_width is overwritten with the env's feature width
    TrainConfig train;
};

enum class RetrainOutcome { not_due, retrained, launched, skipped_empty, failed };

// Model + experience + retrain cadence for one steering run. Single caller
// thread; in overlapped mode the trainer thread only touches its snapshot and
// the swap uses an atomic shared_ptr store.
class SteeringPolicy {
public:
    SteeringPolicy(const BanditConfig& config, int feature_width);
    ~SteeringPolicy();

    SteeringPolicy(const SteeringPolicy&) = delete;
    SteeringPolicy& operator=(const SteeringPolicy&) = delete;

    // Snapshot of the currently served model.
    std::shared_ptr<const TcnnModel> model() const;
    int model_version() const { return version_; }
    bool trained() const { return version_ > 0; }

    const Experience& experience() const { return experience_; }
    const std::vector<double>& last_loss_history() const { return last_loss_history_; }

    void record_outcome(const VectorTree& tree, std::int64_t query_id, int arm_id,
                        double performance, std::int64_t timestamp);

    // Advances the executed-query counters; called once per query, after the
    // outcome (if any) was recorded.
    void count_executed_query();

    // Live retune of the retrain cadence (takes effect at the next trigger).
    void set_retrain_cadence(int every_n);

    // Every-nth-query retrain. Counts executed queries since the last
    // completed trigger; on trigger with empty experience the counter still
    // resets. Training failures keep the previous model active.
    RetrainOutcome maybe_retrain();

    // Swaps in a finished overlapped training result once its lag expired
    // (or immediately when force is set). No-op without a pending train.
    bool poll_swap(bool force = false);

private:
    struct PendingTrain {
        std::future<TrainResult> future;
        std::int64_t swap_at = 0;  // executed-query count at which to swap
        int version = 0;
    };

    TrainResult run_training(std::vector<std::shared_ptr<const VectorTree>> trees,
                             std::vector<double> perfs, std::uint64_t stream) const;

    BanditConfig config_;
    Experience experience_;
    std::shared_ptr<const TcnnModel> model_;
    int version_ = 0;
    std::int64_t executed_ = 0;
    std::int64_t since_trigger_ = 0;
    Rng sample_rng_;  // bootstrap draws + per-retrain substreams
    std::optional<PendingTrain> pending_;
    std::vector<double> last_loss_history_;
};

// ---------------------------------------------------------------------------
// episode driver

enum class PolicyMode { steer, fixed_arm, oracle, random };

struct EpisodeOptions {
    int horizon = 1;
    PolicyMode mode = PolicyMode::steer;
    int fixed_arm_id = 0;
};

struct EpisodeRecord {
    std::int64_t query_id = 0;
    int arm_id = 0;
    int model_version = 0;
    bool exploratory = false;  // cold-start random selection
    double performance = 0.0;
    double optimal_performance = 0.0;
    int optimal_arm_id = 0;
    std::vector<double> predictions;  // per arm; empty for baseline modes
};

struct EpisodeLog {
    std::vector<EpisodeRecord> records;
    int retrain_count = 0;
    int arm_count = 0;
    bool aborted = false;
    std::string error;
};

// Full selection loop: fetch per-arm plans, choose (uniform random until the
// first retrain in steer mode), execute exactly one arm, record its outcome,
// retrain on the configured cadence. Environment failures abort with a
// partial log. on_retrain (when set) observes each new model version.
EpisodeLog run_episode(EpisodeEnv& env, const BanditConfig& config,
                       const EpisodeOptions& options,
                       const std::function<void(int, const TcnnModel&)>& on_retrain = {});

// Same loop over a caller-owned policy, so experience and model survive
// across phases (e.g. introducing a new arm into a warmed-up system).
EpisodeLog run_episode(EpisodeEnv& env, SteeringPolicy& policy, Rng& explore_rng,
                       const EpisodeOptions& options,
                       const std::function<void(int, const TcnnModel&)>& on_retrain = {});

// One JSON object per query, keys in fixed order; deterministic bytes for
// deterministic inputs.
void write_episode_jsonl(const EpisodeLog& log, const std::string& path);
EpisodeLog read_episode_jsonl(const std::string& path);

}  // namespace bao
