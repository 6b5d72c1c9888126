#include "bao/plan.hpp"

#include <cmath>
#include <stdexcept>

namespace bao {

namespace {

PlanNode null_node() {
    PlanNode n;
    n.op = kNullOperator;
    return n;
}

PlanNode binarize_node(const PlanNode& node) {
    const std::size_t arity = node.children.size();

    if (arity == 0) {
        PlanNode out = node;
        out.children.clear();
        return out;
    }

    if (arity == 1) {
        PlanNode out = node;
        out.children.clear();
        out.children.push_back(binarize_node(node.children[0]));
        out.children.push_back(null_node());
        return out;
    }

    if (arity == 2) {
        // A null padding node from a previous pass counts as a leaf child and
        // is taken as-is, which makes the rewrite idempotent.
        PlanNode out = node;
        out.children.clear();
        out.children.push_back(binarize_node(node.children[0]));
        out.children.push_back(binarize_node(node.children[1]));
        return out;
    }

    // Left-deep expansion: fold children pairwise under copies of this
    // operator, keeping the original cardinality/cost/cache on every copy.
    PlanNode acc = node;
    acc.children.clear();
    acc.children.push_back(binarize_node(node.children[0]));
    acc.children.push_back(binarize_node(node.children[1]));
    for (std::size_t i = 2; i < arity; ++i) {
        PlanNode parent = node;
        parent.children.clear();
        parent.children.push_back(std::move(acc));
        parent.children.push_back(binarize_node(node.children[i]));
        acc = std::move(parent);
    }
    return acc;
}

void check_binary(const PlanNode& node) {
    if (node.children.size() != 0 && node.children.size() != 2)
        throw std::invalid_argument("vectorize: tree is not binarized");
    for (const auto& c : node.children) check_binary(c);
}

struct Encoder {
    const FeatureConfig& config;
    std::vector<double> features;
    std::vector<int> left;
    std::vector<int> right;

    int encode(const PlanNode& node) {
        if (node.op < 0 || node.op >= config.vocab_size)
            throw std::invalid_argument(
                "vectorize: operator id " + std::to_string(node.op) +
                " outside vocabulary of size " + std::to_string(config.vocab_size));

        const int index = static_cast<int>(left.size());
        const int w = config.width();
        features.resize(features.size() + w, 0.0);
        left.push_back(VectorTree::kNoChild);
        right.push_back(VectorTree::kNoChild);

        double* f = features.data() + static_cast<std::size_t>(index) * w;
        if (node.op != kNullOperator) {
            f[node.op] = 1.0;
            f[config.vocab_size] = std::log1p(node.cardinality);
            f[config.vocab_size + 1] = std::log1p(node.cost);
            if (config.include_cache && node.cache_fraction)
                f[config.vocab_size + 2] = *node.cache_fraction;
        }
        // Null nodes stay the all-zero vector.

        if (!node.children.empty()) {
            left[index] = encode(node.children[0]);
            right[index] = encode(node.children[1]);
        }
        return index;
    }
};

void validate_node(const PlanNode& node) {
    if (node.cardinality < 0.0 || node.cost < 0.0)
        throw std::invalid_argument("plan node with negative cardinality or cost");
    if (node.cache_fraction && (*node.cache_fraction < 0.0 || *node.cache_fraction > 1.0))
        throw std::invalid_argument("plan node cache fraction outside [0,1]");
    for (const auto& c : node.children) validate_node(c);
}

}  // namespace

PlanTree binarize(const PlanTree& tree) {
    PlanTree out;
    out.root = binarize_node(tree.root);
    out.binarized = true;
    return out;
}

VectorTree vectorize(const PlanTree& tree, const FeatureConfig& config) {
    if (!tree.binarized)
        throw std::invalid_argument("vectorize: input tree must be binarized");
    check_binary(tree.root);
    validate_node(tree.root);

    Encoder enc{config, {}, {}, {}};
    enc.encode(tree.root);

    VectorTree out;
    out.width_ = config.width();
    out.features_ = std::move(enc.features);
    out.left_ = std::move(enc.left);
    out.right_ = std::move(enc.right);
    return out;
}

namespace {
int count_from(const VectorTree& t, int node) {
    if (node == VectorTree::kNoChild) return 0;
    return 1 + count_from(t, t.left(node)) + count_from(t, t.right(node));
}
}  // namespace

int count_nodes(const VectorTree& tree) {
    if (tree.node_count() == 0) return 0;
    return count_from(tree, 0);
}

VectorTree VectorTree::from_flat(int width, std::vector<double> features,
                                 std::vector<int> left, std::vector<int> right) {
    const std::size_t n = left.size();
    if (width < 1 || n == 0 || right.size() != n ||
        features.size() != n * static_cast<std::size_t>(width))
        throw std::invalid_argument("VectorTree::from_flat: inconsistent sizes");
    for (std::size_t i = 0; i < n; ++i) {
        for (int c : {left[i], right[i]})
            if (c != kNoChild && (c < 0 || static_cast<std::size_t>(c) >= n))
                throw std::invalid_argument("VectorTree::from_flat: child index out of range");
        if ((left[i] == kNoChild) != (right[i] == kNoChild))
            throw std::invalid_argument("VectorTree::from_flat: nodes must have 0 or 2 children");
    }
    VectorTree out;
    out.width_ = width;
    out.features_ = std::move(features);
    out.left_ = std::move(left);
    out.right_ = std::move(right);
    if (count_nodes(out) != out.node_count())
        throw std::invalid_argument("VectorTree::from_flat: unreachable nodes");
    return out;
}

namespace {

nlohmann::json node_to_json(const PlanNode& n) {
    nlohmann::json j;
    j["op"] = n.op;
    j["card"] = n.cardinality;
    j["cost"] = n.cost;
    if (n.cache_fraction)
        j["cache"] = *n.cache_fraction;
    else
        j["cache"] = nullptr;
    j["children"] = nlohmann::json::array();
    for (const auto& c : n.children) j["children"].push_back(node_to_json(c));
    return j;
}

PlanNode node_from_json(const nlohmann::json& j) {
    PlanNode n;
    n.op = j.at("op").get<int>();
    n.cardinality = j.at("card").get<double>();
    n.cost = j.at("cost").get<double>();
    if (j.contains("cache") && !j.at("cache").is_null())
        n.cache_fraction = j.at("cache").get<double>();
    for (const auto& c : j.at("children")) n.children.push_back(node_from_json(c));
    return n;
}

}  // namespace

nlohmann::json plan_to_json(const PlanTree& tree) {
    nlohmann::json j = node_to_json(tree.root);
    return j;
}

PlanTree plan_from_json(const nlohmann::json& j) {
    PlanTree t;
    t.root = node_from_json(j);
    return t;
}

}  // namespace bao
