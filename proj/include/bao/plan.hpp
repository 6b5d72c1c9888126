#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace bao {

// Operator index 0 is reserved for the padding node inserted by binarize().
inline constexpr int kNullOperator = 0;

// Width and content of node feature vectors. vocab_size is the number of
// distinct operator ids (including the reserved null operator); the feature
// layout is one-hot(vocab_size) | card | cost | cache.
struct FeatureConfig {
    int vocab_size = 9;
    bool include_cache = true;  // false = cold-cache runs, cache slot pinned to 0

    int width() const { return vocab_size + 3; }
};

struct PlanNode {
    int op = kNullOperator;
    double cardinality = 0.0;  // estimated rows, >= 0
    double cost = 0.0;         // estimated cost units, >= 0
    std::optional<double> cache_fraction;  // scan nodes only, in [0,1]
    std::vector<PlanNode> children;        // arbitrary arity before binarize
};

struct PlanTree {
    PlanNode root;
    bool binarized = false;
};

// Plan tree with every node encoded as a fixed-width feature vector.
// Nodes are stored flat in preorder; node 0 is the root and children are
// index links (kNoChild when absent). Immutable after construction.
class VectorTree {
public:
    static constexpr int kNoChild = -1;

    int node_count() const { return static_cast<int>(left_.size()); }
    int width() const { return width_; }

    std::span<const double> features(int node) const {
        return {features_.data() + static_cast<std::size_t>(node) * width_,
                static_cast<std::size_t>(width_)};
    }

    int left(int node) const { return left_[node]; }
    int right(int node) const { return right_[node]; }

    // Assembles a tree from flat arrays (node 0 = root, children as indices
    // or kNoChild). Validates sizes and link structure.
    static VectorTree from_flat(int width, std::vector<double> features,
                                std::vector<int> left, std::vector<int> right);

private:
    friend VectorTree vectorize(const PlanTree& tree, const FeatureConfig& config);

    int width_ = 0;
    std::vector<double> features_;  // node_count x width, row-major
    std::vector<int> left_;
    std::vector<int> right_;
};

// Rewrites an arbitrary-arity plan into a strictly binary one. Single-child
// nodes gain a null right child; a node with c > 2 children becomes a
// left-deep chain of c-1 binary copies of the same operator. Idempotent.
PlanTree binarize(const PlanTree& tree);

// Encodes a binarized plan as a VectorTree. Null padding nodes map to the
// all-zero vector; card/cost features are log1p of the estimates; the cache
// slot carries cache_fraction for scan nodes (0 when absent or disabled).
// Throws std::invalid_argument on non-binarized input or out-of-vocabulary
// operator ids.
VectorTree vectorize(const PlanTree& tree, const FeatureConfig& config);

// Number of nodes reachable from the root; always equals node_count().
int count_nodes(const VectorTree& tree);

// Wire format: {"op": int, "card": float, "cost": float,
//               "cache": float|null, "children": [...]}
nlohmann::json plan_to_json(const PlanTree& tree);
PlanTree plan_from_json(const nlohmann::json& j);

}  // namespace bao
