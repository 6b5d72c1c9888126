#pragma once

#include <cstdint>
#include <vector>

#include "bao/plan.hpp"

namespace bao {

// Per-query truth computed by exhaustive zero-noise evaluation of every arm.
// Visible to evaluation and logging only; the selection policy never reads it.
struct GroundTruth {
    std::vector<double> per_arm;
    int optimal_arm_id = 0;
    double optimal_performance = 0.0;
};

// What the selection loop sees of an environment: per-arm candidate plans for
// the current query, execution of exactly one of them, and (for evaluation)
// the exhaustive ground truth. Implemented by the simulator and by the
// trace-replay backend.
class EpisodeEnv {
public:
    virtual ~EpisodeEnv() = default;

    virtual int arm_count() const = 0;
    virtual int feature_width() const = 0;

    // Advances to the next query; false once the workload is exhausted.
    virtual bool next_query() = 0;

    virtual std::int64_t query_id() const = 0;

    // Candidate vector trees for the current query, indexed by arm id.
    virtual const std::vector<VectorTree>& candidate_plans() = 0;

    // Executes the chosen arm's plan, returns the observed performance and
    // applies any side effects (cache state, simulation clock).
    virtual double execute(int arm_id) = 0;

    // Zero-noise per-arm truth for the current query.
    virtual const GroundTruth& ground_truth() const = 0;
};

}  // namespace bao
