#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bao/env.hpp"
#include "bao/plan.hpp"
#include "bao/rng.hpp"

namespace bao {

// ---------------------------------------------------------------------------
// hint sets

enum class JoinOp : int { hash = 0, merge = 1, loop = 2 };
enum class ScanOp : int { sequential = 0, index = 1, index_only = 2 };

inline constexpr unsigned op_bit(JoinOp op) { return 1u << static_cast<int>(op); }
inline constexpr unsigned op_bit(ScanOp op) { return 1u << static_cast<int>(op); }

// A valid combination of optimizer flags: the joins and scans the optimizer
// may use. Both masks must be nonempty.
struct HintSet {
    int id = 0;
    unsigned join_mask = 0;
    unsigned scan_mask = 0;

    bool allows(JoinOp op) const { return (join_mask & op_bit(op)) != 0; }
    bool allows(ScanOp op) const { return (scan_mask & op_bit(op)) != 0; }
};

struct AdversarialArm {
    enum class Kind { cj, temp };
    Kind kind = Kind::cj;
    // Temp only: simulation clock (executed-query count) at which the arm
    // flips from optimal plans to cross-join plans.
    std::int64_t switch_time = 0;
    int id = 0;
};

struct FamilyConfig {
    // full: every nonempty join subset x nonempty scan subset (49 combos)
    // minus the configured exclusion. singletons: one join x one scan (9).
    // single: one arm with everything enabled.
    enum class Pool { full, singletons, single };
    Pool pool = Pool::full;

    // The excluded combination (masks must match exactly); zero masks keep
    // all 49. Default drops {loop-only joins, sequential-only scans}.
    unsigned excluded_join_mask = op_bit(JoinOp::loop);
    unsigned excluded_scan_mask = op_bit(ScanOp::sequential);

    std::vector<AdversarialArm> adversarial;  // ids assigned by make_family
};

// Arms in canonical order: join masks 1..7 outer, scan masks 1..7 inner
// (singleton pool: hash,merge,loop x sequential,index,index_only), then any
// adversarial arms. Ids are dense from 0.
class HintFamily {
public:
    int size() const { return static_cast<int>(base_.size() + adversarial_.size()); }
    int base_size() const { return static_cast<int>(base_.size()); }

    bool is_adversarial(int arm_id) const { return arm_id >= base_size(); }
    const HintSet& hint_set(int arm_id) const { return base_.at(arm_id); }
    const AdversarialArm& adversarial(int arm_id) const {
        return adversarial_.at(arm_id - base_size());
    }

    // Arm with the given exact masks, or -1.
    int find_arm(unsigned join_mask, unsigned scan_mask) const;

    // Arm with every operator enabled (the unhinted optimizer), or -1.
    int all_enabled_arm() const { return find_arm(0x7, 0x7); }

private:
    friend HintFamily make_family(const FamilyConfig& config);
    std::vector<HintSet> base_;
    std::vector<AdversarialArm> adversarial_;
};

HintFamily make_family(const FamilyConfig& config);

// ---------------------------------------------------------------------------
// queries and environment

struct QueryRelation {
    int rel_id = 0;
    double rows = 0.0;      // true table cardinality
    double true_sel = 1.0;  // predicate selectivity actually observed
    double est_sel = 1.0;   // what the optimizer believes
    bool covering = false;  // index-only scans answer the query directly
};

struct QueryDescriptor {
    std::int64_t query_id = 0;
    int template_id = 0;
    std::uint64_t shape_seed = 0;
    bool aggregate = false;
    std::vector<QueryRelation> relations;
    std::vector<double> true_fanout;  // join output factor per join step
    std::vector<double> est_fanout;
};

struct CacheState {
    std::vector<double> fraction;  // per relation id, in [0,1]

    static CacheState cold(int relation_count) {
        CacheState c;
        c.fraction.assign(relation_count, 0.0);
        return c;
    }
};

struct EnvConfig {
    int relation_count = 24;
    int template_count = 12;
    int instances_per_template = 200;
    double noise_sigma = 0.1;      // lognormal multiplier on observed latency
    double cache_decay = 0.25;     // per-execution move of touched fractions toward 1
    double cache_discount = 0.8;   // scan cost reduction at fully cached
    bool cold_cache = false;       // pin cache at zero, never update
    bool grouped_workload = true;  // drifting template-to-group order
    int workload_groups = 8;
    std::uint64_t seed = 1;
    FamilyConfig family;
};

EnvConfig env_config_from_json(const nlohmann::json& j);
nlohmann::json env_config_to_json(const EnvConfig& config);

// Drifting workload order: every template is assigned to exactly two of
// `groups` groups with half of its instances in each; instances are shuffled
// within each group and the groups concatenated. With grouped=false the
// instances are shuffled uniformly into a single group.
struct WorkloadOrder {
    std::vector<std::pair<int, int>> sequence;  // (template_id, instance)
    std::vector<int> group_offsets;             // begin index per group, plus end
};

WorkloadOrder plan_workload_order(int templates, int instances, int groups,
                                  bool grouped, Rng& rng);

// Fixed operator vocabulary used by all simulator plans. There is no
// separate cross-join operator: a cross join is a loop join without a join
// predicate (its output cardinality is the full row product), which is how
// database engines execute it.
namespace sim_op {
inline constexpr int null_pad = 0;
inline constexpr int hash_join = 1;
inline constexpr int merge_join = 2;
inline constexpr int loop_join = 3;
inline constexpr int seq_scan = 4;
inline constexpr int index_scan = 5;
inline constexpr int index_only_scan = 6;
inline constexpr int aggregate = 7;
inline constexpr int vocab_size = 8;
}  // namespace sim_op

// Simulated optimizer and execution engine. Construction derives the whole
// world (relations, templates, workload order) from the seed; all methods on
// a const SimEnv are pure.
class SimEnv {
public:
    explicit SimEnv(EnvConfig config);

    const EnvConfig& config() const { return config_; }
    const HintFamily& family() const { return family_; }
    FeatureConfig feature_config() const;
    int relation_count() const { return config_.relation_count; }
    const std::vector<QueryDescriptor>& workload() const { return workload_; }

    // Deterministic plan for (query, arm, cache quantized to 0.01, clock).
    PlanTree plan_for(const QueryDescriptor& q, int arm_id, const CacheState& cache,
                      std::int64_t clock) const;

    // Hidden zero-noise cost of executing that plan, in latency units.
    double true_performance(const QueryDescriptor& q, int arm_id,
                            const CacheState& cache, std::int64_t clock) const;

    // true_performance with the configured lognormal noise applied.
    double sample_performance(const QueryDescriptor& q, int arm_id,
                              const CacheState& cache, std::int64_t clock,
                              Rng& rng) const;

    // Noisy sample plus cache update toward the relations the plan scanned.
    double execute(const QueryDescriptor& q, int arm_id, CacheState& cache,
                   std::int64_t clock, Rng& rng) const;

    // Exhaustive zero-noise evaluation of every arm.
    GroundTruth oracle(const QueryDescriptor& q, const CacheState& cache,
                       std::int64_t clock) const;

private:
    struct Relation {
        double rows = 0.0;
        bool covering = false;
    };

    struct Template {
        std::vector<int> rel_ids;
        std::vector<double> base_sel;       // per relation slot
        std::vector<double> sel_est_bias;   // optimizer error, per slot
        std::vector<double> base_fanout;    // per join step
        std::vector<double> fanout_est_bias;
        bool aggregate = false;
    };

    QueryDescriptor instantiate(int template_id, int instance) const;
    std::vector<QueryDescriptor> build_workload() const;

    PlanTree base_plan(const QueryDescriptor& q, const HintSet& arm,
                       const CacheState& cache, bool annotate_truth) const;
    PlanTree cross_join_plan(const QueryDescriptor& q, const CacheState& cache) const;
    double plan_cost_true(const QueryDescriptor& q, const HintSet& arm,
                          const CacheState& cache) const;
    double best_base_performance(const QueryDescriptor& q, const CacheState& cache,
                                 int* best_arm = nullptr) const;

    EnvConfig config_;
    HintFamily family_;
    std::vector<Relation> relations_;
    std::vector<Template> templates_;
    std::vector<QueryDescriptor> workload_;
};

// Episode-facing adapter owning the mutable pieces (cursor, cache, clock,
// noise stream). start_index lets a run resume partway into the workload.
class SimEpisodeEnv final : public EpisodeEnv {
public:
    SimEpisodeEnv(const SimEnv& env, std::uint64_t noise_seed, int start_index = 0);

    int arm_count() const override { return env_.family().size(); }
    int feature_width() const override;
    bool next_query() override;
    std::int64_t query_id() const override;
    const std::vector<VectorTree>& candidate_plans() override;
    double execute(int arm_id) override;
    const GroundTruth& ground_truth() const override;

    const CacheState& cache() const { return cache_; }
    std::int64_t clock() const { return clock_; }

private:
    const SimEnv& env_;
    Rng rng_;
    CacheState cache_;
    std::int64_t clock_ = 0;
    std::ptrdiff_t cursor_ = -1;
    std::vector<VectorTree> plans_;
    GroundTruth truth_;
    bool prepared_ = false;
    void prepare();
};

// ---------------------------------------------------------------------------
// trace replay

struct TraceQuery {
    std::int64_t query_id = 0;
    std::vector<PlanTree> per_arm_plan;
    std::vector<double> per_arm_perf;
};

// JSON lines {query_id, arm_id, plan, performance}; lines for one query must
// be contiguous with arm ids dense from 0. Throws std::runtime_error naming
// the offending line number.
std::vector<TraceQuery> load_trace(const std::string& path);
void save_trace(const std::vector<TraceQuery>& trace, const std::string& path);

// Records a trace from the simulator: per query, every arm's plan and its
// zero-noise performance under the initial cache state.
std::vector<TraceQuery> record_trace(const SimEnv& env, int query_count);

class TraceEpisodeEnv final : public EpisodeEnv {
public:
    TraceEpisodeEnv(std::vector<TraceQuery> trace, FeatureConfig features);

    int arm_count() const override { return arm_count_; }
    int feature_width() const override { return features_.width(); }
    bool next_query() override;
    std::int64_t query_id() const override;
    const std::vector<VectorTree>& candidate_plans() override;
    double execute(int arm_id) override;
    const GroundTruth& ground_truth() const override;

private:
    std::vector<TraceQuery> trace_;
    FeatureConfig features_;
    int arm_count_ = 0;
    std::ptrdiff_t cursor_ = -1;
    std::vector<VectorTree> plans_;
    GroundTruth truth_;
    void prepare();
};

}  // namespace bao
