#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>

#include "bao/simenv.hpp"

using namespace bao;

namespace {

EnvConfig small_env(std::uint64_t seed, FamilyConfig::Pool pool) {
    EnvConfig c;
    c.seed = seed;
    c.family.pool = pool;
    c.relation_count = 16;
    c.template_count = 8;
    c.instances_per_template = 30;
    c.noise_sigma = 0.0;
    return c;
}

void walk(const PlanNode& n, const std::function<void(const PlanNode&)>& f) {
    f(n);
    for (const auto& c : n.children) walk(c, f);
}

bool is_join(int op) {
    return op == sim_op::hash_join || op == sim_op::merge_join || op == sim_op::loop_join;
}
bool is_scan(int op) {
    return op == sim_op::seq_scan || op == sim_op::index_scan ||
           op == sim_op::index_only_scan;
}

}  // namespace

TEST_CASE("family enumeration counts") {
    FamilyConfig no_exclusion;
    no_exclusion.excluded_join_mask = 0;
    no_exclusion.excluded_scan_mask = 0;
    CHECK(make_family(no_exclusion).size() == 49);

    FamilyConfig def;
    CHECK(make_family(def).size() == 48);

    FamilyConfig with_cj;
    with_cj.adversarial.push_back({AdversarialArm::Kind::cj, 0, 0});
    const HintFamily fam = make_family(with_cj);
    CHECK(fam.size() == 49);
    CHECK(fam.base_size() == 48);
    CHECK(fam.is_adversarial(48));
    CHECK(!fam.is_adversarial(47));

    FamilyConfig singles;
    singles.pool = FamilyConfig::Pool::singletons;
    CHECK(make_family(singles).size() == 9);

    FamilyConfig one;
    one.pool = FamilyConfig::Pool::single;
    CHECK(make_family(one).size() == 1);
}

TEST_CASE("family enumeration is a bijection with dense ids") {
    FamilyConfig cfg;
    cfg.excluded_join_mask = 0;
    cfg.excluded_scan_mask = 0;
    const HintFamily fam = make_family(cfg);
    std::set<std::pair<unsigned, unsigned>> combos;
    for (int a = 0; a < fam.base_size(); ++a) {
        const HintSet& h = fam.hint_set(a);
        CHECK(h.id == a);
        CHECK(h.join_mask >= 1);
        CHECK(h.join_mask <= 7);
        CHECK(h.scan_mask >= 1);
        CHECK(h.scan_mask <= 7);
        combos.insert({h.join_mask, h.scan_mask});
    }
    CHECK(combos.size() == 49);

    // the default exclusion removes exactly the configured combination
    const HintFamily def = make_family(FamilyConfig{});
    CHECK(def.find_arm(op_bit(JoinOp::loop), op_bit(ScanOp::sequential)) == -1);
    CHECK(def.find_arm(0x7, 0x7) == def.all_enabled_arm());
    CHECK(def.all_enabled_arm() != -1);
}

TEST_CASE("plans are deterministic functions of (query, arm, cache)") {
    const SimEnv env(small_env(11, FamilyConfig::Pool::singletons));
    CacheState cache = CacheState::cold(env.relation_count());
    cache.fraction[0] = 0.5;
    const QueryDescriptor& q = env.workload()[3];
    for (int a = 0; a < env.family().size(); ++a) {
        const auto p1 = plan_to_json(env.plan_for(q, a, cache, 0));
        const auto p2 = plan_to_json(env.plan_for(q, a, cache, 0));
        CHECK(p1 == p2);
    }
    // sub-quantum cache drift does not change the plan
    CacheState drifted = cache;
    drifted.fraction[0] += 0.0009;
    CHECK(plan_to_json(env.plan_for(q, 0, cache, 0)) ==
          plan_to_json(env.plan_for(q, 0, drifted, 0)));
}

TEST_CASE("plans only use operators the arm enables") {
    const SimEnv env(small_env(5, FamilyConfig::Pool::full));
    const CacheState cache = CacheState::cold(env.relation_count());
    for (int qi = 0; qi < 10; ++qi) {
        const QueryDescriptor& q = env.workload()[qi];
        for (int a = 0; a < env.family().size(); a += 3) {
            const HintSet& h = env.family().hint_set(a);
            walk(env.plan_for(q, a, cache, 0).root, [&](const PlanNode& n) {
                if (n.op == sim_op::hash_join) CHECK(h.allows(JoinOp::hash));
                if (n.op == sim_op::merge_join) CHECK(h.allows(JoinOp::merge));
                if (n.op == sim_op::loop_join) CHECK(h.allows(JoinOp::loop));
                if (n.op == sim_op::seq_scan) CHECK(h.allows(ScanOp::sequential));
                if (n.op == sim_op::index_scan) CHECK(h.allows(ScanOp::index));
                if (n.op == sim_op::index_only_scan) CHECK(h.allows(ScanOp::index_only));
            });
        }
    }
}

TEST_CASE("a loop-only arm produces only loop joins") {
    EnvConfig cfg = small_env(5, FamilyConfig::Pool::singletons);
    const SimEnv env(cfg);
    const CacheState cache = CacheState::cold(env.relation_count());
    const int arm = 6;  // loop x sequential in singleton order
    CHECK(env.family().hint_set(arm).join_mask == op_bit(JoinOp::loop));
    for (int qi = 0; qi < 8; ++qi) {
        walk(env.plan_for(env.workload()[qi], arm, cache, 0).root, [](const PlanNode& n) {
            if (is_join(n.op)) CHECK(n.op == sim_op::loop_join);
        });
    }
}

TEST_CASE("the CJ arm produces cross joins everywhere") {
    EnvConfig cfg = small_env(5, FamilyConfig::Pool::singletons);
    cfg.family.adversarial.push_back({AdversarialArm::Kind::cj, 0, 0});
    const SimEnv env(cfg);
    const CacheState cache = CacheState::cold(env.relation_count());
    const int cj = env.family().size() - 1;
    for (int qi = 0; qi < 8; ++qi) {
        // cross joins are predicate-free loop joins; each join's cardinality
        // is the full row product of the tables underneath it, compressed
        // above the estimator's knee
        const QueryDescriptor& q = env.workload()[qi];
        std::vector<double> join_cards;
        walk(env.plan_for(q, cj, cache, 0).root, [&](const PlanNode& n) {
            if (is_join(n.op)) {
                CHECK(n.op == sim_op::loop_join);
                join_cards.push_back(n.cardinality);
            }
        });
        REQUIRE(join_cards.size() == q.relations.size() - 1);
        // walk() visits the left-deep chain top-down; rebuild bottom-up
        double product = q.relations[0].rows;
        for (std::size_t k = 1; k < q.relations.size(); ++k) {
            product *= q.relations[k].rows;
            const double card = join_cards[join_cards.size() - k];
            if (product <= 1e8) {
                CHECK(card == product);
            } else {
                CHECK(card >= 1e8);
                CHECK(card < product);  // compressed, never linear
            }
            if (k >= 2) CHECK(card >= join_cards[join_cards.size() - k + 1]);
        }
    }
}

TEST_CASE("zero noise makes sampling identical to the hidden truth") {
    const SimEnv env(small_env(7, FamilyConfig::Pool::singletons));
    const CacheState cache = CacheState::cold(env.relation_count());
    const QueryDescriptor& q = env.workload()[0];
    Rng r1(1), r2(2);
    const double a = env.sample_performance(q, 2, cache, 0, r1);
    const double b = env.sample_performance(q, 2, cache, 0, r2);
    const double t = env.true_performance(q, 2, cache, 0);
    CHECK(a == b);
    CHECK(a == t);
    CHECK(t > 0.0);
}

TEST_CASE("noise is a lognormal multiplier around the truth") {
    EnvConfig cfg = small_env(7, FamilyConfig::Pool::singletons);
    cfg.noise_sigma = 0.3;
    const SimEnv env(cfg);
    const CacheState cache = CacheState::cold(env.relation_count());
    const QueryDescriptor& q = env.workload()[0];
    const double truth = env.true_performance(q, 0, cache, 0);
    Rng rng(9);
    double log_acc = 0;
    const int n = 4000;
    for (int i = 0; i < n; ++i)
        log_acc += std::log(env.sample_performance(q, 0, cache, 0, rng) / truth);
    CHECK(log_acc / n == doctest::Approx(0.0).epsilon(0.02));
}

TEST_CASE("CJ costs exactly 100x the zero-noise optimal") {
    EnvConfig cfg = small_env(3, FamilyConfig::Pool::singletons);
    cfg.family.adversarial.push_back({AdversarialArm::Kind::cj, 0, 0});
    const SimEnv env(cfg);
    const CacheState cache = CacheState::cold(env.relation_count());
    const int cj = env.family().size() - 1;
    for (int qi = 0; qi < 20; ++qi) {
        const QueryDescriptor& q = env.workload()[qi];
        double base_best = 1e300;
        for (int a = 0; a < env.family().base_size(); ++a)
            base_best = std::min(base_best, env.true_performance(q, a, cache, 0));
        CHECK(env.true_performance(q, cj, cache, 0) ==
              doctest::Approx(100.0 * base_best).epsilon(1e-12));
    }
}

TEST_CASE("Temp switches from optimal to 100x at the configured clock") {
    EnvConfig cfg = small_env(3, FamilyConfig::Pool::singletons);
    cfg.family.adversarial.push_back({AdversarialArm::Kind::temp, 50, 0});
    const SimEnv env(cfg);
    const CacheState cache = CacheState::cold(env.relation_count());
    const int temp = env.family().size() - 1;
    for (int qi = 0; qi < 10; ++qi) {
        const QueryDescriptor& q = env.workload()[qi];
        const double before = env.true_performance(q, temp, cache, 49);
        const double after = env.true_performance(q, temp, cache, 50);
        CHECK(after / before == doctest::Approx(100.0).epsilon(1e-12));

        // while behaving, Temp is the oracle-optimal arm
        const GroundTruth gt = env.oracle(q, cache, 0);
        CHECK(gt.optimal_arm_id == temp);
        CHECK(gt.optimal_performance == before);
        // its plan is annotated with accurate statistics, so it differs from
        // the arms the optimizer plans with estimates
        const GroundTruth gt_after = env.oracle(q, cache, 50);
        CHECK(gt_after.optimal_arm_id != temp);
    }
}

TEST_CASE("oracle matches a brute-force re-evaluation and dominates every arm") {
    EnvConfig cfg = small_env(13, FamilyConfig::Pool::singletons);
    cfg.family.adversarial.push_back({AdversarialArm::Kind::cj, 0, 0});
    const SimEnv env(cfg);
    const CacheState cache = CacheState::cold(env.relation_count());
    for (int qi = 0; qi < 30; ++qi) {
        const QueryDescriptor& q = env.workload()[qi];
        const GroundTruth gt = env.oracle(q, cache, 0);
        REQUIRE(gt.per_arm.size() == static_cast<std::size_t>(env.family().size()));

        int best = 0;
        for (int a = 0; a < env.family().size(); ++a) {
            const double perf = env.true_performance(q, a, cache, 0);
            CHECK(gt.per_arm[a] == perf);
            CHECK(gt.optimal_performance <= perf);
            if (perf < gt.per_arm[best]) best = a;
        }
        CHECK(gt.optimal_arm_id == best);
        CHECK(gt.per_arm[best] == gt.optimal_performance);
        // CJ is never optimal
        CHECK(gt.optimal_arm_id != env.family().size() - 1);
    }
}

TEST_CASE("a single-arm family makes that arm optimal") {
    const SimEnv env(small_env(3, FamilyConfig::Pool::single));
    const CacheState cache = CacheState::cold(env.relation_count());
    const GroundTruth gt = env.oracle(env.workload()[0], cache, 0);
    CHECK(gt.per_arm.size() == 1);
    CHECK(gt.optimal_arm_id == 0);
}

TEST_CASE("execution warms the cache toward the touched relations") {
    const SimEnv env(small_env(17, FamilyConfig::Pool::singletons));
    CacheState cache = CacheState::cold(env.relation_count());
    Rng rng(1);
    const QueryDescriptor& q = env.workload()[0];

    std::set<int> touched;
    for (const auto& r : q.relations) touched.insert(r.rel_id);

    env.execute(q, 0, cache, 0, rng);
    for (int r = 0; r < env.relation_count(); ++r) {
        if (touched.count(r)) {
            CHECK(cache.fraction[r] > 0.0);
        } else {
            CHECK(cache.fraction[r] == 0.0);
        }
    }

    // repeated execution is monotone toward 1
    double prev = cache.fraction[*touched.begin()];
    for (int i = 0; i < 30; ++i) {
        env.execute(q, 0, cache, 0, rng);
        const double cur = cache.fraction[*touched.begin()];
        CHECK(cur >= prev);
        CHECK(cur <= 1.0);
        prev = cur;
    }
    CHECK(prev > 0.9);

    // a warmer cache never makes the same plan slower
    CacheState cold = CacheState::cold(env.relation_count());
    CHECK(env.true_performance(q, 0, cache, 0) <= env.true_performance(q, 0, cold, 0));
}

TEST_CASE("queries over disjoint relations update disjoint cache entries") {
    const SimEnv env(small_env(17, FamilyConfig::Pool::singletons));
    // find two workload queries with disjoint relation sets
    const auto& wl = env.workload();
    int qa = -1, qb = -1;
    for (std::size_t i = 0; i < wl.size() && qa < 0; ++i)
        for (std::size_t j = i + 1; j < wl.size(); ++j) {
            std::set<int> ra;
            for (const auto& r : wl[i].relations) ra.insert(r.rel_id);
            bool disjoint = true;
            for (const auto& r : wl[j].relations) disjoint = disjoint && !ra.count(r.rel_id);
            if (disjoint) {
                qa = static_cast<int>(i);
                qb = static_cast<int>(j);
                break;
            }
        }
    REQUIRE(qa >= 0);

    Rng rng(2);
    CacheState ca = CacheState::cold(env.relation_count());
    env.execute(wl[qa], 0, ca, 0, rng);
    CacheState cb = CacheState::cold(env.relation_count());
    env.execute(wl[qb], 0, cb, 0, rng);
    for (int r = 0; r < env.relation_count(); ++r)
        CHECK(!(ca.fraction[r] > 0.0 && cb.fraction[r] > 0.0));
}

TEST_CASE("cold-cache mode pins the cache at zero") {
    EnvConfig cfg = small_env(17, FamilyConfig::Pool::singletons);
    cfg.cold_cache = true;
    const SimEnv env(cfg);
    CHECK(!env.feature_config().include_cache);
    CacheState cache = CacheState::cold(env.relation_count());
    Rng rng(3);
    for (int i = 0; i < 5; ++i) env.execute(env.workload()[i], 0, cache, i, rng);
    for (double f : cache.fraction) CHECK(f == 0.0);
}

TEST_CASE("workload grouping puts each template in exactly two groups") {
    Rng rng(21);
    const WorkloadOrder order = plan_workload_order(8, 10, 8, true, rng);
    CHECK(order.sequence.size() == 80);
    REQUIRE(order.group_offsets.size() == 9);

    std::map<int, std::set<int>> groups_of_template;
    std::map<int, std::set<int>> instances_seen;
    for (int g = 0; g < 8; ++g)
        for (int i = order.group_offsets[g]; i < order.group_offsets[g + 1]; ++i) {
            groups_of_template[order.sequence[i].first].insert(g);
            instances_seen[order.sequence[i].first].insert(order.sequence[i].second);
        }
    for (int t = 0; t < 8; ++t) {
        CHECK(groups_of_template[t].size() == 2);
        CHECK(instances_seen[t].size() == 10);
    }
}

TEST_CASE("workload order is reproducible and the ungrouped mode shuffles uniformly") {
    Rng a(5), b(5);
    const WorkloadOrder oa = plan_workload_order(6, 9, 8, true, a);
    const WorkloadOrder ob = plan_workload_order(6, 9, 8, true, b);
    CHECK(oa.sequence == ob.sequence);

    Rng c(5);
    const WorkloadOrder oc = plan_workload_order(6, 9, 8, false, c);
    CHECK(oc.sequence.size() == 54);
    CHECK(oc.group_offsets == std::vector<int>{0, 54});
    std::set<std::pair<int, int>> unique(oc.sequence.begin(), oc.sequence.end());
    CHECK(unique.size() == 54);
}

TEST_CASE("same seed gives an identical environment and workload") {
    const SimEnv a(small_env(23, FamilyConfig::Pool::singletons));
    const SimEnv b(small_env(23, FamilyConfig::Pool::singletons));
    REQUIRE(a.workload().size() == b.workload().size());
    const CacheState cache = CacheState::cold(a.relation_count());
    for (int i = 0; i < 20; ++i) {
        CHECK(a.workload()[i].template_id == b.workload()[i].template_id);
        CHECK(plan_to_json(a.plan_for(a.workload()[i], 0, cache, 0)) ==
              plan_to_json(b.plan_for(b.workload()[i], 0, cache, 0)));
    }
}

TEST_CASE("calibration gate: per-query oracle beats every fixed arm by at least 20%") {
    // frozen acceptance environment: singleton family, world seed 1
    EnvConfig cfg;
    cfg.seed = 1;
    cfg.family.pool = FamilyConfig::Pool::singletons;
    cfg.noise_sigma = 0.0;
    const SimEnv env(cfg);
    const CacheState cache = CacheState::cold(env.relation_count());

    const int arms = env.family().size();
    std::vector<double> fixed_total(arms, 0.0);
    std::set<int> winners;
    double oracle_total = 0.0;
    for (int i = 0; i < 500; ++i) {
        const GroundTruth gt = env.oracle(env.workload()[i], cache, 0);
        oracle_total += gt.optimal_performance;
        winners.insert(gt.optimal_arm_id);
        for (int a = 0; a < arms; ++a) fixed_total[a] += gt.per_arm[a];
    }
    const double best_fixed = *std::min_element(fixed_total.begin(), fixed_total.end());
    CHECK(oracle_total <= 0.8 * best_fixed);
    // no arm is optimal for every query
    CHECK(winners.size() >= 2);
}

TEST_CASE("traces round-trip and malformed lines are reported with line numbers") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "bao_trace_test";
    fs::create_directories(dir);
    const std::string path = (dir / "trace.jsonl").string();

    const SimEnv env(small_env(29, FamilyConfig::Pool::singletons));
    const auto trace = record_trace(env, 5);
    REQUIRE(trace.size() == 5);
    save_trace(trace, path);

    const auto loaded = load_trace(path);
    REQUIRE(loaded.size() == 5);
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].query_id == trace[i].query_id);
        REQUIRE(loaded[i].per_arm_perf.size() == trace[i].per_arm_perf.size());
        for (std::size_t a = 0; a < loaded[i].per_arm_perf.size(); ++a)
            CHECK(loaded[i].per_arm_perf[a] == trace[i].per_arm_perf[a]);
    }

    {
        std::ofstream os(path, std::ios::app);
        os << "{\"query_id\": 99, \"arm_id\": 5, \"plan\": {}, \"performance\": 1.0}\n";
    }
    try {
        load_trace(path);
        FAIL("expected malformed trace to throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("line 46") != std::string::npos);
    }

    std::ofstream empty(path, std::ios::trunc);
    empty.close();
    CHECK_THROWS_AS(load_trace(path), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("trace replay env serves recorded plans and outcomes") {
    const SimEnv env(small_env(29, FamilyConfig::Pool::singletons));
    auto trace = record_trace(env, 4);
    TraceEpisodeEnv replay(trace, env.feature_config());
    CHECK(replay.arm_count() == env.family().size());

    int queries = 0;
    while (replay.next_query()) {
        const auto& plans = replay.candidate_plans();
        CHECK(static_cast<int>(plans.size()) == replay.arm_count());
        const GroundTruth& gt = replay.ground_truth();
        const double perf = replay.execute(gt.optimal_arm_id);
        CHECK(perf == gt.optimal_performance);
        ++queries;
    }
    CHECK(queries == 4);
}

TEST_CASE("env config round-trips through JSON") {
    EnvConfig c = small_env(31, FamilyConfig::Pool::full);
    c.family.adversarial.push_back({AdversarialArm::Kind::temp, 123, 0});
    c.cold_cache = true;
    c.noise_sigma = 0.25;
    const EnvConfig back = env_config_from_json(env_config_to_json(c));
    CHECK(back.seed == c.seed);
    CHECK(back.cold_cache == c.cold_cache);
    CHECK(back.noise_sigma == c.noise_sigma);
    CHECK(back.family.pool == c.family.pool);
    REQUIRE(back.family.adversarial.size() == 1);
    CHECK(back.family.adversarial[0].kind == AdversarialArm::Kind::temp);
    CHECK(back.family.adversarial[0].switch_time == 123);
    CHECK(make_family(back.family).size() == make_family(c.family).size());
}
