#include "bao/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace bao {

namespace {

// Cost-model constants. Values are calibrated so that no arm wins everywhere
// and a per-query oracle beats every fixed arm by a wide margin (the
// calibration tests pin this down).
constexpr double kLatencyScale = 1e-4;     // cost units -> latency units
constexpr double kSeqRowCost = 1.0;
constexpr double kIndexSetup = 150.0;
constexpr double kIndexRowCost = 10.0;
constexpr double kIndexOnlyCoveringFactor = 0.2;
constexpr double kIndexOnlyFallbackFactor = 2.0;
constexpr double kHashRowCost = 1.3;
constexpr double kHashMemRows = 2.5e5;     // build side above this spills
constexpr double kHashSpillRowCost = 3.0;
constexpr double kMergeSortedFactor = 1.3;
constexpr double kMergeUnsortedFactor = 5.0;
constexpr double kLoopProbeFactor = 5.0;   // per outer row: factor * log2(1+inner)
constexpr double kLoopScanPairCost = 0.25; // per row pair, unindexed inner
constexpr double kAggRowCost = 0.7;
constexpr double kAggOutFraction = 0.08;
constexpr double kCrossPairCost = 1.0;

constexpr double kCjPenalty = 100.0;   // CJ arm: 100x the best base arm
constexpr double kTempEdge = 0.9;      // Temp realizes a plan 10% better than
                                       // any base arm while it behaves

// The simulated optimizer compresses extreme estimates, like real ones do:
// annotations grow only logarithmically beyond these knees, so a cross-join
// row product stays ordered by query size instead of either dwarfing every
// legitimate plan or flattening to one indistinguishable ceiling.
constexpr double kEstCardKnee = 1e8;
constexpr double kEstCostKnee = 1e11;

double soft_cap(double x, double knee) {
    return x <= knee ? x : knee * (1.0 + std::log(x / knee));
}

double quantize_cache(double f) { return std::round(f * 100.0) / 100.0; }

struct ScanDecision {
    int op = sim_op::seq_scan;
    bool sorted_output = false;  // index-order scans emit sorted rows
};

struct Skeleton {
    std::vector<int> order;    // relation slots, join order
    std::vector<ScanDecision> scan;  // per slot (indexed by slot, not order)
    std::vector<int> join_op;  // per join step
    bool cartesian = false;    // no join predicates: output is the row product
};

}  // namespace

// ---------------------------------------------------------------------------
// hint family

int HintFamily::find_arm(unsigned join_mask, unsigned scan_mask) const {
    for (const HintSet& h : base_)
        if (h.join_mask == join_mask && h.scan_mask == scan_mask) return h.id;
    return -1;
}

HintFamily make_family(const FamilyConfig& config) {
    HintFamily fam;
    int id = 0;
    switch (config.pool) {
        case FamilyConfig::Pool::full:
            for (unsigned jm = 1; jm <= 7; ++jm)
                for (unsigned sm = 1; sm <= 7; ++sm) {
                    if (jm == config.excluded_join_mask && sm == config.excluded_scan_mask)
                        continue;
                    fam.base_.push_back(HintSet{id++, jm, sm});
                }
            break;
        case FamilyConfig::Pool::singletons:
            for (int j = 0; j < 3; ++j)
                for (int s = 0; s < 3; ++s)
                    fam.base_.push_back(HintSet{id++, 1u << j, 1u << s});
            break;
        case FamilyConfig::Pool::single:
            fam.base_.push_back(HintSet{id++, 0x7, 0x7});
            break;
    }
    if (fam.base_.empty())
        throw std::invalid_argument("make_family: configuration leaves no arms");
    for (AdversarialArm arm : config.adversarial) {
        arm.id = id++;
        fam.adversarial_.push_back(arm);
    }
    return fam;
}

// ---------------------------------------------------------------------------
// env config JSON

EnvConfig env_config_from_json(const nlohmann::json& j) {
    EnvConfig c;
    c.relation_count = j.value("relations", c.relation_count);
    c.template_count = j.value("templates", c.template_count);
    c.instances_per_template = j.value("instances_per_template", c.instances_per_template);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.cache_decay = j.value("cache_decay", c.cache_decay);
    c.cache_discount = j.value("cache_discount", c.cache_discount);
    c.cold_cache = j.value("cold_cache", c.cold_cache);
    c.grouped_workload = j.value("grouped_workload", c.grouped_workload);
    c.workload_groups = j.value("workload_groups", c.workload_groups);
    c.seed = j.value("seed", c.seed);
    if (j.contains("family")) {
        const auto& f = j.at("family");
        const std::string pool = f.value("pool", std::string("full"));
        if (pool == "full")
            c.family.pool = FamilyConfig::Pool::full;
        else if (pool == "singletons")
            c.family.pool = FamilyConfig::Pool::singletons;
        else if (pool == "single")
            c.family.pool = FamilyConfig::Pool::single;
        else
            throw std::invalid_argument("env config: unknown family pool '" + pool + "'");
        if (f.contains("exclude")) {
            if (f.at("exclude").is_null()) {
                c.family.excluded_join_mask = 0;
                c.family.excluded_scan_mask = 0;
            } else {
                c.family.excluded_join_mask = f.at("exclude").at(0).get<unsigned>();
                c.family.excluded_scan_mask = f.at("exclude").at(1).get<unsigned>();
            }
        }
        for (const auto& a : f.value("adversarial", nlohmann::json::array())) {
            AdversarialArm arm;
            const std::string kind = a.at("kind").get<std::string>();
            if (kind == "cj")
                arm.kind = AdversarialArm::Kind::cj;
            else if (kind == "temp")
                arm.kind = AdversarialArm::Kind::temp;
            else
                throw std::invalid_argument("env config: unknown adversarial kind '" + kind + "'");
            arm.switch_time = a.value("switch_time", std::int64_t{0});
            c.family.adversarial.push_back(arm);
        }
    }
    return c;
}

nlohmann::json env_config_to_json(const EnvConfig& c) {
    nlohmann::json adv = nlohmann::json::array();
    for (const auto& a : c.family.adversarial)
        adv.push_back({{"kind", a.kind == AdversarialArm::Kind::cj ? "cj" : "temp"},
                       {"switch_time", a.switch_time}});
    const char* pool = "full";
    if (c.family.pool == FamilyConfig::Pool::singletons) pool = "singletons";
    if (c.family.pool == FamilyConfig::Pool::single) pool = "single";
    nlohmann::json family{{"pool", pool}, {"adversarial", adv}};
    if (c.family.excluded_join_mask == 0 && c.family.excluded_scan_mask == 0)
        family["exclude"] = nullptr;
    else
        family["exclude"] = {c.family.excluded_join_mask, c.family.excluded_scan_mask};
    return nlohmann::json{{"relations", c.relation_count},
                          {"templates", c.template_count},
                          {"instances_per_template", c.instances_per_template},
                          {"noise_sigma", c.noise_sigma},
                          {"cache_decay", c.cache_decay},
                          {"cache_discount", c.cache_discount},
                          {"cold_cache", c.cold_cache},
                          {"grouped_workload", c.grouped_workload},
                          {"workload_groups", c.workload_groups},
                          {"seed", c.seed},
                          {"family", family}};
}

// ---------------------------------------------------------------------------
// world generation

SimEnv::SimEnv(EnvConfig config) : config_(std::move(config)), family_(make_family(config_.family)) {
    if (config_.relation_count < 2 || config_.template_count < 1 ||
        config_.instances_per_template < 1)
        throw std::invalid_argument("SimEnv: invalid world dimensions");

    Rng root(config_.seed);

    Rng rel_rng = root.substream(1);
    relations_.resize(config_.relation_count);
    for (auto& rel : relations_) {
        rel.rows = std::exp(rel_rng.uniform(std::log(5e2), std::log(5e7)));
        rel.covering = rel_rng.uniform() < 0.5;
    }

    // relations ranked by size; heavy templates draw from the biggest ones so
    // the workload always contains queries near the estimate ceilings
    std::vector<int> by_size(config_.relation_count);
    std::iota(by_size.begin(), by_size.end(), 0);
    std::sort(by_size.begin(), by_size.end(), [&](int a, int b) {
        return relations_[a].rows > relations_[b].rows;
    });

    Rng tpl_rng = root.substream(2);
    templates_.resize(config_.template_count);
    for (auto& t : templates_) {
        const int m = 2 + static_cast<int>(tpl_rng.below(5));  // 2..6 relations
        const bool heavy = tpl_rng.uniform() < 0.35;
        std::vector<int> ids;
        if (heavy) {
            const int pool = std::max(m, config_.relation_count / 3);
            ids.assign(by_size.begin(), by_size.begin() + pool);
        } else {
            ids.resize(config_.relation_count);
            std::iota(ids.begin(), ids.end(), 0);
        }
        tpl_rng.shuffle(ids);
        t.rel_ids.assign(ids.begin(), ids.begin() + m);
        for (int s = 0; s < m; ++s) {
            t.base_sel.push_back(std::pow(10.0, tpl_rng.uniform(-3.5, -0.05)));
            t.sel_est_bias.push_back(
                std::clamp(std::exp(tpl_rng.normal(0.0, 1.0)), 0.02, 50.0));
        }
        for (int s = 0; s + 1 < m; ++s) {
            t.base_fanout.push_back(std::pow(10.0, tpl_rng.uniform(-1.5, 0.5)));
            t.fanout_est_bias.push_back(
                std::clamp(std::exp(tpl_rng.normal(0.0, 0.5)), 0.1, 10.0));
        }
        t.aggregate = tpl_rng.uniform() < 0.4;
    }

    workload_ = build_workload();
}

FeatureConfig SimEnv::feature_config() const {
    FeatureConfig f;
    f.vocab_size = sim_op::vocab_size;
    f.include_cache = !config_.cold_cache;
    return f;
}

QueryDescriptor SimEnv::instantiate(int template_id, int instance) const {
    const Template& t = templates_[template_id];
    const std::uint64_t stream =
        0x51000000ULL + static_cast<std::uint64_t>(template_id) * 65536ULL +
        static_cast<std::uint64_t>(instance);
    Rng r = Rng(config_.seed).substream(stream);

    QueryDescriptor q;
    q.template_id = template_id;
    q.shape_seed = stream;
    q.aggregate = t.aggregate;
    for (std::size_t s = 0; s < t.rel_ids.size(); ++s) {
        QueryRelation rel;
        rel.rel_id = t.rel_ids[s];
        rel.rows = relations_[rel.rel_id].rows;
        rel.covering = relations_[rel.rel_id].covering;
        rel.true_sel = std::clamp(t.base_sel[s] * std::exp(r.normal(0.0, 0.25)), 1e-5, 0.9);
        rel.est_sel = std::clamp(rel.true_sel * t.sel_est_bias[s], 1e-6, 0.95);
        q.relations.push_back(rel);
    }
    for (std::size_t s = 0; s < t.base_fanout.size(); ++s) {
        const double truth =
            std::clamp(t.base_fanout[s] * std::exp(r.normal(0.0, 0.2)), 1e-4, 20.0);
        q.true_fanout.push_back(truth);
        q.est_fanout.push_back(std::clamp(truth * t.fanout_est_bias[s], 1e-4, 50.0));
    }
    return q;
}

WorkloadOrder plan_workload_order(int templates, int instances, int groups,
                                  bool grouped, Rng& rng) {
    if (templates < 1 || instances < 1)
        throw std::invalid_argument("workload: template and instance counts must be >= 1");

    WorkloadOrder order;
    if (!grouped) {
        for (int t = 0; t < templates; ++t)
            for (int i = 0; i < instances; ++i) order.sequence.emplace_back(t, i);
        rng.shuffle(order.sequence);
        order.group_offsets = {0, static_cast<int>(order.sequence.size())};
        return order;
    }

    if (groups < 2) throw std::invalid_argument("workload: grouping needs >= 2 groups");
    std::vector<std::vector<std::pair<int, int>>> buckets(groups);
    for (int t = 0; t < templates; ++t) {
        // exactly two distinct groups per template, half its instances in each
        const int g1 = static_cast<int>(rng.below(groups));
        int g2 = static_cast<int>(rng.below(groups - 1));
        if (g2 >= g1) ++g2;
        const int half = (instances + 1) / 2;
        for (int i = 0; i < instances; ++i)
            buckets[i < half ? g1 : g2].emplace_back(t, i);
    }
    order.group_offsets.push_back(0);
    for (auto& b : buckets) {
        rng.shuffle(b);
        for (auto& q : b) order.sequence.push_back(q);
        order.group_offsets.push_back(static_cast<int>(order.sequence.size()));
    }
    return order;
}

std::vector<QueryDescriptor> SimEnv::build_workload() const {
    Rng wl_rng = Rng(config_.seed).substream(3);
    const WorkloadOrder order =
        plan_workload_order(config_.template_count, config_.instances_per_template,
                            config_.workload_groups, config_.grouped_workload, wl_rng);

    std::vector<QueryDescriptor> all;
    all.reserve(order.sequence.size());
    for (std::size_t i = 0; i < order.sequence.size(); ++i) {
        all.push_back(instantiate(order.sequence[i].first, order.sequence[i].second));
        all.back().query_id = static_cast<std::int64_t>(i);
    }
    return all;
}

// ---------------------------------------------------------------------------
// plan generation and the hidden cost model

namespace {

double scan_cost(int op, double table_rows, double out_rows, bool covering,
                 double cached, double discount) {
    double c = 0.0;
    switch (op) {
        case sim_op::seq_scan: c = table_rows * kSeqRowCost; break;
        case sim_op::index_scan: c = kIndexSetup + kIndexRowCost * out_rows; break;
        case sim_op::index_only_scan:
            c = kIndexSetup + kIndexRowCost * out_rows *
                                  (covering ? kIndexOnlyCoveringFactor
                                            : kIndexOnlyFallbackFactor);
            break;
        default: throw std::logic_error("scan_cost: not a scan operator");
    }
    return c * (1.0 - discount * cached);
}

double join_cost(int op, double l_rows, double r_rows, bool inner_indexed,
                 bool inputs_sorted, bool cartesian) {
    switch (op) {
        case sim_op::hash_join: {
            double c = kHashRowCost * (l_rows + r_rows);
            if (r_rows > kHashMemRows) c += kHashSpillRowCost * r_rows;
            return c;
        }
        case sim_op::merge_join:
            return (l_rows + r_rows) *
                   (inputs_sorted ? kMergeSortedFactor : kMergeUnsortedFactor);
        case sim_op::loop_join:
            if (cartesian) return l_rows * r_rows * kCrossPairCost;
            return inner_indexed ? l_rows * kLoopProbeFactor * std::log2(1.0 + r_rows)
                                 : l_rows * r_rows * kLoopScanPairCost;
        default: throw std::logic_error("join_cost: not a join operator");
    }
}

int scan_sim_op(ScanOp op) {
    switch (op) {
        case ScanOp::sequential: return sim_op::seq_scan;
        case ScanOp::index: return sim_op::index_scan;
        case ScanOp::index_only: return sim_op::index_only_scan;
    }
    return sim_op::seq_scan;
}

int join_sim_op(JoinOp op) {
    switch (op) {
        case JoinOp::hash: return sim_op::hash_join;
        case JoinOp::merge: return sim_op::merge_join;
        case JoinOp::loop: return sim_op::loop_join;
    }
    return sim_op::hash_join;
}

}  // namespace

// Builds the skeleton (scan types, join order, join operators) the simulated
// optimizer picks for this arm, using its *estimated* statistics and the
// quantized cache state.
namespace {

Skeleton make_skeleton(const QueryDescriptor& q, const HintSet& arm,
                       const CacheState& cache, double discount) {
    const std::size_t m = q.relations.size();
    Skeleton sk;
    sk.scan.resize(m);

    std::vector<double> est_out(m);
    for (std::size_t s = 0; s < m; ++s) {
        const QueryRelation& rel = q.relations[s];
        est_out[s] = std::max(1.0, rel.rows * rel.est_sel);
        const double cached = quantize_cache(cache.fraction[rel.rel_id]);

        double best_cost = 0.0;
        bool first = true;
        for (ScanOp op : {ScanOp::sequential, ScanOp::index, ScanOp::index_only}) {
            if (!arm.allows(op)) continue;
            const double c = scan_cost(scan_sim_op(op), rel.rows, est_out[s],
                                       rel.covering, cached, discount);
            if (first || c < best_cost) {
                best_cost = c;
                sk.scan[s] = {scan_sim_op(op), op != ScanOp::sequential};
                first = false;
            }
        }
    }

    // join order: estimated output ascending, original slot as tiebreak
    sk.order.resize(m);
    std::iota(sk.order.begin(), sk.order.end(), 0);
    std::stable_sort(sk.order.begin(), sk.order.end(),
                     [&](int a, int b) { return est_out[a] < est_out[b]; });

    // left-deep chain; pick the cheapest enabled join per step
    double left_rows = est_out[sk.order[0]];
    bool left_sorted = sk.scan[sk.order[0]].sorted_output;
    for (std::size_t k = 1; k < m; ++k) {
        const int slot = sk.order[k];
        const double right_rows = est_out[slot];
        const bool inner_indexed = sk.scan[slot].op != sim_op::seq_scan;
        const bool sorted = left_sorted && sk.scan[slot].sorted_output;

        int best_op = 0;
        double best_cost = 0.0;
        bool first = true;
        for (JoinOp op : {JoinOp::hash, JoinOp::merge, JoinOp::loop}) {
            if (!arm.allows(op)) continue;
            const double c = join_cost(join_sim_op(op), left_rows, right_rows,
                                       inner_indexed, sorted, false);
            if (first || c < best_cost) {
                best_cost = c;
                best_op = join_sim_op(op);
                first = false;
            }
        }
        sk.join_op.push_back(best_op);
        left_rows = std::max(1.0, std::min(left_rows, right_rows) * q.est_fanout[k - 1]);
        left_sorted = best_op == sim_op::merge_join;
    }
    return sk;
}

// Predicate-free loop joins over sequential scans: the plan shape a hint set
// that blocks every join condition induces.
Skeleton cross_join_skeleton(const QueryDescriptor& q) {
    Skeleton sk;
    const std::size_t m = q.relations.size();
    sk.scan.assign(m, {sim_op::seq_scan, false});
    sk.order.resize(m);
    std::iota(sk.order.begin(), sk.order.end(), 0);
    sk.join_op.assign(m - 1, sim_op::loop_join);
    sk.cartesian = true;
    return sk;
}

struct CostedPlan {
    PlanTree tree;
    double total_cost = 0.0;
};

// Walks a skeleton and prices it. With `truth` the walk uses the hidden
// selectivities/fanouts and raw cache fractions; otherwise the optimizer's
// estimates and the quantized cache (these become the plan annotations).
CostedPlan cost_skeleton(const QueryDescriptor& q, const Skeleton& sk,
                         const CacheState& cache, double discount, bool truth) {
    const std::size_t m = q.relations.size();

    // a cartesian (predicate-blocked) plan loses its filter pushdown too, so
    // its scans produce the full tables
    auto rows_out = [&](std::size_t slot) {
        const QueryRelation& rel = q.relations[slot];
        if (sk.cartesian) return rel.rows;
        return std::max(1.0, rel.rows * (truth ? rel.true_sel : rel.est_sel));
    };

    auto make_scan = [&](std::size_t slot) {
        const QueryRelation& rel = q.relations[slot];
        const double raw = cache.fraction[rel.rel_id];
        const double stamped = quantize_cache(raw);
        const double used = truth ? raw : stamped;
        PlanNode n;
        n.op = sk.scan[slot].op;
        n.cardinality = soft_cap(rows_out(slot), kEstCardKnee);
        n.cost = soft_cap(
            scan_cost(n.op, rel.rows, rows_out(slot), rel.covering, used, discount),
            kEstCostKnee);
        n.cache_fraction = stamped;
        return n;
    };

    PlanNode acc = make_scan(sk.order[0]);
    // with the join predicates blocked, nothing limits a join below the full
    // row product of the tables underneath it
    double acc_rows = sk.cartesian ? q.relations[sk.order[0]].rows : acc.cardinality;
    bool acc_sorted = sk.scan[sk.order[0]].sorted_output;
    double total = acc.cost;

    for (std::size_t k = 1; k < m; ++k) {
        const std::size_t slot = sk.order[k];
        PlanNode rhs = make_scan(slot);
        total += rhs.cost;

        const int op = sk.join_op[k - 1];
        const bool inner_indexed = sk.scan[slot].op != sim_op::seq_scan;
        const bool sorted = acc_sorted && sk.scan[slot].sorted_output;
        const double rhs_rows = sk.cartesian ? q.relations[slot].rows : rhs.cardinality;
        const double jc = join_cost(op, acc_rows, rhs_rows, inner_indexed, sorted,
                                    sk.cartesian);
        total += jc;

        double out_rows;
        if (sk.cartesian) {
            out_rows = acc_rows * rhs_rows;
        } else {
            const double fan = truth ? q.true_fanout[k - 1] : q.est_fanout[k - 1];
            out_rows = std::max(1.0, std::min(acc_rows, rhs_rows) * fan);
        }

        PlanNode join;
        join.op = op;
        join.cardinality = soft_cap(out_rows, kEstCardKnee);
        // cumulative, like real optimizer plan costs
        join.cost = soft_cap(total, kEstCostKnee);
        join.children.push_back(std::move(acc));
        join.children.push_back(std::move(rhs));
        acc = std::move(join);
        acc_rows = out_rows;
        acc_sorted = op == sim_op::merge_join;
    }

    if (q.aggregate) {
        total += kAggRowCost * acc_rows;
        PlanNode agg;
        agg.op = sim_op::aggregate;
        agg.cardinality = soft_cap(std::max(1.0, kAggOutFraction * acc_rows), kEstCardKnee);
        agg.cost = soft_cap(total, kEstCostKnee);
        agg.children.push_back(std::move(acc));
        acc = std::move(agg);
    }

    CostedPlan out;
    out.tree.root = std::move(acc);
    out.tree.binarized = false;
    out.total_cost = total;
    return out;
}

}  // namespace

PlanTree SimEnv::base_plan(const QueryDescriptor& q, const HintSet& arm,
                           const CacheState& cache, bool annotate_truth) const {
    const Skeleton sk = make_skeleton(q, arm, cache, config_.cache_discount);
    return cost_skeleton(q, sk, cache, config_.cache_discount, annotate_truth).tree;
}

PlanTree SimEnv::cross_join_plan(const QueryDescriptor& q, const CacheState& cache) const {
    const Skeleton sk = cross_join_skeleton(q);
    return cost_skeleton(q, sk, cache, config_.cache_discount, false).tree;
}

double SimEnv::plan_cost_true(const QueryDescriptor& q, const HintSet& arm,
                              const CacheState& cache) const {
    const Skeleton sk = make_skeleton(q, arm, cache, config_.cache_discount);
    return cost_skeleton(q, sk, cache, config_.cache_discount, true).total_cost;
}

double SimEnv::best_base_performance(const QueryDescriptor& q, const CacheState& cache,
                                     int* best_arm) const {
    double best = 0.0;
    int arg = -1;
    for (int a = 0; a < family_.base_size(); ++a) {
        const double perf = plan_cost_true(q, family_.hint_set(a), cache) * kLatencyScale;
        if (arg < 0 || perf < best) {
            best = perf;
            arg = a;
        }
    }
    if (best_arm) *best_arm = arg;
    return best;
}

PlanTree SimEnv::plan_for(const QueryDescriptor& q, int arm_id, const CacheState& cache,
                          std::int64_t clock) const {
    if (arm_id < 0 || arm_id >= family_.size())
        throw std::invalid_argument("plan_for: arm id out of range");
    if (!family_.is_adversarial(arm_id))
        return base_plan(q, family_.hint_set(arm_id), cache, false);

    const AdversarialArm& adv = family_.adversarial(arm_id);
    if (adv.kind == AdversarialArm::Kind::cj || clock >= adv.switch_time)
        return cross_join_plan(q, cache);

    // Temp before the switch: the best base arm's plan shape, annotated with
    // the accurate statistics the precomputed plan was derived from.
    int best = 0;
    best_base_performance(q, cache, &best);
    return base_plan(q, family_.hint_set(best), cache, true);
}

double SimEnv::true_performance(const QueryDescriptor& q, int arm_id,
                                const CacheState& cache, std::int64_t clock) const {
    if (arm_id < 0 || arm_id >= family_.size())
        throw std::invalid_argument("true_performance: arm id out of range");
    if (!family_.is_adversarial(arm_id))
        return plan_cost_true(q, family_.hint_set(arm_id), cache) * kLatencyScale;

    const AdversarialArm& adv = family_.adversarial(arm_id);
    const double base = best_base_performance(q, cache);
    if (adv.kind == AdversarialArm::Kind::cj) return kCjPenalty * base;
    const double before = kTempEdge * base;
    return clock < adv.switch_time ? before : kCjPenalty * before;
}

double SimEnv::sample_performance(const QueryDescriptor& q, int arm_id,
                                  const CacheState& cache, std::int64_t clock,
                                  Rng& rng) const {
    const double z = rng.normal();
    return true_performance(q, arm_id, cache, clock) * std::exp(config_.noise_sigma * z);
}

double SimEnv::execute(const QueryDescriptor& q, int arm_id, CacheState& cache,
                       std::int64_t clock, Rng& rng) const {
    const double perf = sample_performance(q, arm_id, cache, clock, rng);
    if (!config_.cold_cache) {
        for (const QueryRelation& rel : q.relations) {
            double& f = cache.fraction[rel.rel_id];
            f += config_.cache_decay * (1.0 - f);
        }
    }
    return perf;
}

GroundTruth SimEnv::oracle(const QueryDescriptor& q, const CacheState& cache,
                           std::int64_t clock) const {
    GroundTruth gt;
    gt.per_arm.resize(family_.size());
    const double base = best_base_performance(q, cache);
    for (int a = 0; a < family_.size(); ++a) {
        if (!family_.is_adversarial(a)) {
            gt.per_arm[a] = plan_cost_true(q, family_.hint_set(a), cache) * kLatencyScale;
        } else {
            const AdversarialArm& adv = family_.adversarial(a);
            if (adv.kind == AdversarialArm::Kind::cj)
                gt.per_arm[a] = kCjPenalty * base;
            else
                gt.per_arm[a] = clock < adv.switch_time ? kTempEdge * base
                                                        : kCjPenalty * kTempEdge * base;
        }
    }
    gt.optimal_arm_id = 0;
    gt.optimal_performance = gt.per_arm[0];
    for (int a = 1; a < family_.size(); ++a)
        if (gt.per_arm[a] < gt.optimal_performance) {
            gt.optimal_performance = gt.per_arm[a];
            gt.optimal_arm_id = a;
        }
    return gt;
}

// ---------------------------------------------------------------------------
// episode adapter

SimEpisodeEnv::SimEpisodeEnv(const SimEnv& env, std::uint64_t noise_seed, int start_index)
    : env_(env),
      rng_(noise_seed),
      cache_(CacheState::cold(env.relation_count())),
      cursor_(static_cast<std::ptrdiff_t>(start_index) - 1) {
    if (start_index < 0 || static_cast<std::size_t>(start_index) > env.workload().size())
        throw std::invalid_argument("SimEpisodeEnv: start index outside the workload");
}

int SimEpisodeEnv::feature_width() const { return env_.feature_config().width(); }

bool SimEpisodeEnv::next_query() {
    if (cursor_ + 1 >= static_cast<std::ptrdiff_t>(env_.workload().size())) return false;
    ++cursor_;
    prepared_ = false;
    return true;
}

std::int64_t SimEpisodeEnv::query_id() const {
    return env_.workload()[cursor_].query_id;
}

void SimEpisodeEnv::prepare() {
    if (prepared_) return;
    const QueryDescriptor& q = env_.workload()[cursor_];
    const FeatureConfig fc = env_.feature_config();
    plans_.clear();
    plans_.reserve(env_.family().size());
    for (int a = 0; a < env_.family().size(); ++a)
        plans_.push_back(vectorize(binarize(env_.plan_for(q, a, cache_, clock_)), fc));
    truth_ = env_.oracle(q, cache_, clock_);
    prepared_ = true;
}

const std::vector<VectorTree>& SimEpisodeEnv::candidate_plans() {
    prepare();
    return plans_;
}

double SimEpisodeEnv::execute(int arm_id) {
    prepare();
    const QueryDescriptor& q = env_.workload()[cursor_];
    const double perf = env_.execute(q, arm_id, cache_, clock_, rng_);
    ++clock_;
    return perf;
}

const GroundTruth& SimEpisodeEnv::ground_truth() const {
    const_cast<SimEpisodeEnv*>(this)->prepare();
    return truth_;
}

// ---------------------------------------------------------------------------
// trace replay

std::vector<TraceQuery> load_trace(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("trace: cannot open " + path);

    std::vector<TraceQuery> trace;
    std::string line;
    std::size_t lineno = 0;
    int expected_arms = -1;

    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("trace line " + std::to_string(lineno) +
                                     ": invalid JSON: " + e.what());
        }
        std::int64_t qid;
        int arm;
        double perf;
        PlanTree plan;
        try {
            qid = j.at("query_id").get<std::int64_t>();
            arm = j.at("arm_id").get<int>();
            perf = j.at("performance").get<double>();
            plan = plan_from_json(j.at("plan"));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("trace line " + std::to_string(lineno) +
                                     ": missing or malformed field: " + e.what());
        }
        if (perf < 0.0)
            throw std::runtime_error("trace line " + std::to_string(lineno) +
                                     ": negative performance");

        if (trace.empty() || trace.back().query_id != qid) {
            if (!trace.empty()) {
                const int arms = static_cast<int>(trace.back().per_arm_perf.size());
                if (expected_arms == -1) expected_arms = arms;
                if (arms != expected_arms)
                    throw std::runtime_error("trace line " + std::to_string(lineno) +
                                             ": inconsistent arm count for previous query");
            }
            if (arm != 0)
                throw std::runtime_error("trace line " + std::to_string(lineno) +
                                         ": arm ids must start at 0 for each query");
            trace.push_back(TraceQuery{qid, {}, {}});
        } else if (arm != static_cast<int>(trace.back().per_arm_perf.size())) {
            throw std::runtime_error("trace line " + std::to_string(lineno) +
                                     ": arm ids must be dense and in order");
        }
        trace.back().per_arm_plan.push_back(std::move(plan));
        trace.back().per_arm_perf.push_back(perf);
    }

    if (trace.empty()) throw std::runtime_error("trace: " + path + " contains no records");
    const int arms = static_cast<int>(trace.back().per_arm_perf.size());
    if (expected_arms != -1 && arms != expected_arms)
        throw std::runtime_error("trace: last query has inconsistent arm count");
    return trace;
}

void save_trace(const std::vector<TraceQuery>& trace, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("trace: cannot open " + path + " for writing");
    for (const TraceQuery& q : trace)
        for (std::size_t a = 0; a < q.per_arm_perf.size(); ++a) {
            nlohmann::json j{{"query_id", q.query_id},
                             {"arm_id", static_cast<int>(a)},
                             {"plan", plan_to_json(q.per_arm_plan[a])},
                             {"performance", q.per_arm_perf[a]}};
            os << j.dump() << '\n';
        }
}

std::vector<TraceQuery> record_trace(const SimEnv& env, int query_count) {
    const CacheState cache = CacheState::cold(env.relation_count());
    std::vector<TraceQuery> trace;
    const int n = std::min<int>(query_count, static_cast<int>(env.workload().size()));
    for (int i = 0; i < n; ++i) {
        const QueryDescriptor& q = env.workload()[i];
        TraceQuery tq;
        tq.query_id = q.query_id;
        for (int a = 0; a < env.family().size(); ++a) {
            tq.per_arm_plan.push_back(env.plan_for(q, a, cache, 0));
            tq.per_arm_perf.push_back(env.true_performance(q, a, cache, 0));
        }
        trace.push_back(std::move(tq));
    }
    return trace;
}

TraceEpisodeEnv::TraceEpisodeEnv(std::vector<TraceQuery> trace, FeatureConfig features)
    : trace_(std::move(trace)), features_(features) {
    if (trace_.empty()) throw std::invalid_argument("trace replay: empty trace");
    arm_count_ = static_cast<int>(trace_.front().per_arm_perf.size());
    if (arm_count_ < 1) throw std::invalid_argument("trace replay: query with no arms");
}

bool TraceEpisodeEnv::next_query() {
    if (cursor_ + 1 >= static_cast<std::ptrdiff_t>(trace_.size())) return false;
    ++cursor_;
    plans_.clear();
    return true;
}

std::int64_t TraceEpisodeEnv::query_id() const { return trace_[cursor_].query_id; }

void TraceEpisodeEnv::prepare() {
    if (!plans_.empty()) return;
    const TraceQuery& q = trace_[cursor_];
    for (const PlanTree& p : q.per_arm_plan)
        plans_.push_back(vectorize(binarize(p), features_));
    truth_.per_arm = q.per_arm_perf;
    truth_.optimal_arm_id = 0;
    truth_.optimal_performance = q.per_arm_perf[0];
    for (std::size_t a = 1; a < q.per_arm_perf.size(); ++a)
        if (q.per_arm_perf[a] < truth_.optimal_performance) {
            truth_.optimal_performance = q.per_arm_perf[a];
            truth_.optimal_arm_id = static_cast<int>(a);
        }
}

const std::vector<VectorTree>& TraceEpisodeEnv::candidate_plans() {
    prepare();
    return plans_;
}

double TraceEpisodeEnv::execute(int arm_id) {
    prepare();
    return trace_[cursor_].per_arm_perf.at(arm_id);
}

const GroundTruth& TraceEpisodeEnv::ground_truth() const {
    const_cast<TraceEpisodeEnv*>(this)->prepare();
    return truth_;
}

}  // namespace bao
