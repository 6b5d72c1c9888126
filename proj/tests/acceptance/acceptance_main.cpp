// Acceptance suite: one criterion per command-line id (A1..A10), all run when
// no id is given. Each criterion prints a single PASS/FAIL line.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bao/experiment.hpp"
#include "bao/metrics.hpp"

using namespace bao;

namespace {

// ---------------------------------------------------------------------------
// independent reference implementations (plain loops, no shared code with the
// library's batched path)

using Row = std::vector<double>;

Row ref_conv_node(const VectorTree& t, const std::vector<Row>& x, const ConvLayer& l,
                  int node) {
    const int out = static_cast<int>(l.bias.size());
    const int in = static_cast<int>(x[node].size());
    Row y(out, 0.0);
    for (int o = 0; o < out; ++o) {
        double acc = l.bias(o);
        for (int i = 0; i < in; ++i) acc += l.w_self(o, i) * x[node][i];
        if (t.left(node) != VectorTree::kNoChild)
            for (int i = 0; i < in; ++i) acc += l.w_left(o, i) * x[t.left(node)][i];
        if (t.right(node) != VectorTree::kNoChild)
            for (int i = 0; i < in; ++i) acc += l.w_right(o, i) * x[t.right(node)][i];
        y[o] = acc;
    }
    return y;
}

Row ref_layernorm(const Row& z, const NormLayer& norm) {
    const int m = static_cast<int>(z.size());
    double mu = 0;
    for (double v : z) mu += v;
    mu /= m;
    double var = 0;
    for (double v : z) var += (v - mu) * (v - mu);
    var /= m;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    Row y(m);
    for (int i = 0; i < m; ++i) y[i] = norm.gain(i) * (z[i] - mu) * inv + norm.shift(i);
    return y;
}

double ref_forward(const TcnnModel& model, const VectorTree& t) {
    std::vector<Row> x(t.node_count());
    for (int n = 0; n < t.node_count(); ++n) {
        auto f = t.features(n);
        x[n].assign(f.begin(), f.end());
        for (double& v : x[n]) v *= model.dims.input_scale;
    }
    for (std::size_t l = 0; l < model.conv.size(); ++l) {
        std::vector<Row> y(x.size());
        for (int n = 0; n < static_cast<int>(x.size()); ++n)
            y[n] = ref_conv_node(t, x, model.conv[l], n);
        for (auto& row : y) {
            row = ref_layernorm(row, model.conv_norm[l]);
            for (double& v : row) v = std::max(0.0, v);
        }
        x = std::move(y);
    }
    const int c = static_cast<int>(x[0].size());
    Row pooled(c, -1e300);
    for (const auto& row : x)
        for (int j = 0; j < c; ++j) pooled[j] = std::max(pooled[j], row[j]);

    const int h = static_cast<int>(model.fc1.bias.size());
    Row h1(h, 0.0);
    for (int o = 0; o < h; ++o) {
        double acc = model.fc1.bias(o);
        for (int i = 0; i < c; ++i) acc += model.fc1.w(o, i) * pooled[i];
        h1[o] = acc;
    }
    h1 = ref_layernorm(h1, model.fc1_norm);
    for (double& v : h1) v = std::max(0.0, v);

    double out = model.fc2.bias(0);
    for (int i = 0; i < h; ++i) out += model.fc2.w(0, i) * h1[i];
    return out;
}

// random tree shapes with raw feature vectors
VectorTree random_feature_tree(Rng& rng, int width) {
    std::vector<double> features;
    std::vector<int> left, right;
    features.insert(features.end(), width, 0.0);
    left.push_back(VectorTree::kNoChild);
    right.push_back(VectorTree::kNoChild);
    struct Item {
        int index, depth;
    };
    std::vector<Item> open{{0, 0}};
    while (!open.empty()) {
        Item it = open.back();
        open.pop_back();
        for (int j = 0; j < width; ++j)
            features[static_cast<std::size_t>(it.index) * width + j] = rng.normal(0.0, 1.5);
        if (it.depth < 3 && rng.uniform() < 0.6) {
            for (int c = 0; c < 2; ++c) {
                const int idx = static_cast<int>(left.size());
                features.insert(features.end(), width, 0.0);
                left.push_back(VectorTree::kNoChild);
                right.push_back(VectorTree::kNoChild);
                (c == 0 ? left : right)[it.index] = idx;
                open.push_back({idx, it.depth + 1});
            }
        }
    }
    return VectorTree::from_flat(width, std::move(features), std::move(left),
                                 std::move(right));
}

// arbitrary-arity random plan trees
PlanNode random_plan_node(Rng& rng, int vocab, int depth) {
    PlanNode n;
    n.op = 1 + static_cast<int>(rng.below(vocab - 1));
    n.cardinality = rng.lognormal(4.0, 2.0);
    n.cost = rng.lognormal(5.0, 2.0);
    const int arity = depth <= 0 ? 0 : static_cast<int>(rng.below(5));
    if (arity == 0 && rng.uniform() < 0.3) n.cache_fraction = rng.uniform();
    for (int i = 0; i < arity; ++i)
        n.children.push_back(random_plan_node(rng, vocab, depth - 1));
    return n;
}

bool no_single_child(const PlanNode& n) {
    if (n.children.size() == 1) return false;
    for (const auto& c : n.children)
        if (!no_single_child(c)) return false;
    return true;
}

double mean_tail_regret(const EpisodeLog& log, std::size_t tail) {
    double acc = 0;
    for (std::size_t i = log.records.size() - tail; i < log.records.size(); ++i)
        acc += log.records[i].performance - log.records[i].optimal_performance;
    return acc / static_cast<double>(tail);
}

std::string read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

// the calibrated desk-scale environment (see the simenv calibration test)
EnvConfig acceptance_env() {
    EnvConfig e;
    e.seed = 1;
    e.family.pool = FamilyConfig::Pool::singletons;
    return e;
}

TcnnDims reduced_dims() {
    TcnnDims d;
    d.conv_channels = {32, 16};
    d.fc_hidden = 8;
    return d;
}

// ---------------------------------------------------------------------------
// criteria

bool a1_gradients(std::string& detail) {
    Rng rng(0xA1);
    const int width = 4;
    TcnnDims dims;
    dims.input_width = width;
    dims.conv_channels = {8, 4};
    dims.fc_hidden = 3;

    const auto start = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (int instance = 0; instance < 50; ++instance) {
        TcnnModel m = init_model(dims, 0xA100 + instance);
        VectorTree tree = random_feature_tree(rng, width);
        TrainExample ex{&tree, rng.uniform(0.0, 3.0)};
        auto [g, loss] = backward(m, {&ex, 1});

        auto loss_at = [&](TcnnModel& model) {
            const double pred = forward(model, tree);
            return (pred - ex.target) * (pred - ex.target);
        };

        std::vector<std::span<double>> mp, gp;
        visit_params(m, [&](std::span<double> s) { mp.push_back(s); });
        visit_params(g, [&](std::span<double> s) { gp.push_back(s); });
        const double eps = 1e-4;
        for (std::size_t p = 0; p < mp.size(); ++p)
            for (std::size_t k = 0; k < mp[p].size(); ++k) {
                const double save = mp[p][k];
                mp[p][k] = save + eps;
                const double up = loss_at(m);
                mp[p][k] = save - eps;
                const double dn = loss_at(m);
                mp[p][k] = save;
                const double fd = (up - dn) / (2 * eps);
                const double ref = std::max({std::abs(fd), std::abs(gp[p][k]), 1e-6});
                const double rel = std::abs(fd - gp[p][k]) / ref;
                worst = std::max(worst, rel);
                if (rel >= 1e-4) {
                    detail = "relative error " + std::to_string(rel) + " at instance " +
                             std::to_string(instance);
                    return false;
                }
            }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ostringstream os;
    os << "50 instances, worst relative error " << worst << ", " << secs << "s";
    detail = os.str();
    return secs < 60.0;
}

bool a2_regret_convergence(std::string& detail) {
    ExperimentConfig base;
    base.env = acceptance_env();
    base.horizon = 2000;
    base.seed = 0xA2;
    base.bandit.retrain_every_n = 50;
    base.bandit.window_k = 1000;
    base.save_checkpoints = false;

    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "bao_accept_a2";
    fs::remove_all(dir);

    std::fprintf(stderr, "  [A2] steering run (horizon 2000, default dims)...\n");
    EpisodeLog steer_log;
    base.out_dir = (dir / "steer").string();
    run_experiment(base, &steer_log);
    const double steer = mean_tail_regret(steer_log, 500);

    std::fprintf(stderr, "  [A2] random baseline...\n");
    ExperimentConfig rnd = base;
    rnd.mode = PolicyMode::random;
    rnd.out_dir = (dir / "random").string();
    EpisodeLog random_log;
    run_experiment(rnd, &random_log);
    const double random_regret = mean_tail_regret(random_log, 500);

    std::fprintf(stderr, "  [A2] fixed-arm baselines...\n");
    double best_fixed = 1e300;
    int best_arm = -1;
    const int arms = make_family(base.env.family).size();
    for (int a = 0; a < arms; ++a) {
        ExperimentConfig fx = base;
        fx.mode = PolicyMode::fixed_arm;
        fx.fixed_arm_id = a;
        fx.out_dir = (dir / ("fixed" + std::to_string(a))).string();
        EpisodeLog fixed_log;
        run_experiment(fx, &fixed_log);
        const double r = mean_tail_regret(fixed_log, 500);
        if (r < best_fixed) {
            best_fixed = r;
            best_arm = a;
        }
    }

    std::ostringstream os;
    os << "mean regret over final 500: steer=" << steer << " random=" << random_regret
       << " best_fixed=" << best_fixed << " (arm " << best_arm << ")";
    detail = os.str();
    fs::remove_all(dir);
    return steer < 0.5 * random_regret && steer <= best_fixed;
}

// The resiliency setup mirrors the original experiment: the poisoned hint
// set is introduced into a system that has already been steering the
// workload, and the question is how often it gets chosen once tried.
bool a3_poisoned_arm(std::string& detail) {
    std::ostringstream os;
    bool ok = true;
    constexpr int kWarmup = 500;
    constexpr int kHorizon = 1300;

    EnvConfig base_env;
    base_env.seed = 1;
    base_env.family.pool = FamilyConfig::Pool::full;
    base_env.grouped_workload = false;

    EnvConfig poisoned_cfg = base_env;
    poisoned_cfg.family.adversarial.push_back({AdversarialArm::Kind::cj, 0, 0});

    const SimEnv warm_env(base_env);
    const SimEnv poisoned_env(poisoned_cfg);

    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        // frequent retrains while warming up, then an even tighter cadence
        // once the poisoned arm arrives so a bad pick is corrected quickly;
        // the raised learning rate makes each retrain actually absorb a rare
        // catastrophic observation instead of smoothing it away
        BanditConfig bandit;
        bandit.retrain_every_n = 25;
        bandit.window_k = 2000;
        bandit.dims.conv_channels = {64, 32};
        bandit.dims.fc_hidden = 16;
        bandit.train.learning_rate = 3e-3;
        bandit.rng_seed = Rng(seed).substream(0xB0).next_u64();

        SteeringPolicy policy(bandit, warm_env.feature_config().width());
        Rng explore = Rng(bandit.rng_seed).substream(0x636F6C64);

        SimEpisodeEnv phase1(warm_env, Rng(seed).substream(0xE0).next_u64(), 0);
        EpisodeOptions warm_opt;
        warm_opt.horizon = kWarmup;
        run_episode(phase1, policy, explore, warm_opt);

        policy.set_retrain_cadence(10);
        SimEpisodeEnv phase2(poisoned_env, Rng(seed).substream(0xE1).next_u64(), kWarmup);
        EpisodeOptions opt;
        opt.horizon = kHorizon;
        const EpisodeLog log = run_episode(phase2, policy, explore, opt);
        const int cj = log.arm_count - 1;

        std::ptrdiff_t first = -1;
        for (std::size_t t = 0; t < log.records.size(); ++t)
            if (log.records[t].arm_id == cj) {
                first = static_cast<std::ptrdiff_t>(t);
                break;
            }
        int later = 0;
        if (first >= 0)
            for (std::size_t t = first + 1;
                 t < log.records.size() && t <= static_cast<std::size_t>(first) + 1000; ++t)
                later += log.records[t].arm_id == cj ? 1 : 0;
        os << "seed " << seed << ": first@" << first << " +" << later << " in next 1000; ";
        std::fprintf(stderr, "  [A3] seed %llu: first selection at %td, %d more\n",
                     (unsigned long long)seed, first, later);
        ok = ok && later <= 2;
    }
    detail = os.str();
    return ok;
}

bool a4_drift_adaptation(std::string& detail) {
    std::ostringstream os;
    bool ok = true;
    const std::int64_t switch_time = 400;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ExperimentConfig cfg;
        cfg.env.seed = 1;
        cfg.env.family.pool = FamilyConfig::Pool::full;
        cfg.env.grouped_workload = false;
        cfg.env.family.adversarial.push_back(
            {AdversarialArm::Kind::temp, switch_time, 0});
        cfg.horizon = 750;
        cfg.seed = seed;
        cfg.bandit.retrain_every_n = 25;
        cfg.bandit.window_k = 2000;
        cfg.bandit.dims.conv_channels = {64, 32};
        cfg.bandit.dims.fc_hidden = 16;
        cfg.bandit.train.learning_rate = 3e-3;
        cfg.save_checkpoints = false;
        cfg.out_dir = (std::filesystem::temp_directory_path() / "bao_accept_a4").string();

        EpisodeLog log;
        run_experiment(cfg, &log);
        const int temp = log.arm_count - 1;

        std::vector<int> chosen;
        for (const auto& r : log.records) chosen.push_back(r.arm_id);
        const auto freq = selection_frequency(chosen, temp, 100);
        const double pre = freq[switch_time - 1];
        const double post = freq[switch_time + 300 - 1];
        os << "seed " << seed << ": pre=" << pre << " post+300=" << post << "; ";
        std::fprintf(stderr, "  [A4] seed %llu: pre-switch freq %.2f, post+300 freq %.3f\n",
                     (unsigned long long)seed, pre, post);
        ok = ok && pre > 0.5 && post < 0.05;
    }
    std::filesystem::remove_all(std::filesystem::temp_directory_path() / "bao_accept_a4");
    detail = os.str();
    return ok;
}

bool a5_bootstrap_stats(std::string& detail) {
    FeatureConfig fc;
    fc.vocab_size = sim_op::vocab_size;
    PlanTree pt;
    pt.root.op = sim_op::seq_scan;
    pt.root.cardinality = 10;
    pt.root.cost = 5;
    auto tree = std::make_shared<VectorTree>(vectorize(binarize(pt), fc));

    Experience e(1000);
    for (int i = 0; i < 1000; ++i) e.record(tree, i, 0, 1.0, i);

    double fraction_acc = 0.0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        const auto sample = bootstrap_sample(e, rng);
        if (sample.size() != 1000) {
            detail = "sample size " + std::to_string(sample.size()) + " != 1000";
            return false;
        }
        std::set<const ExperienceEntry*> distinct(sample.begin(), sample.end());
        fraction_acc += static_cast<double>(distinct.size()) / 1000.0;
    }
    const double mean_fraction = fraction_acc / 200.0;
    std::ostringstream os;
    os << "mean distinct fraction " << mean_fraction << " (theory 1-1/e = "
       << 1.0 - std::exp(-1.0) << ")";
    detail = os.str();
    return mean_fraction >= 0.62 && mean_fraction <= 0.645;
}

bool a6_training_time_linearity(std::string& detail) {
    const std::size_t windows[] = {250, 500, 1000, 2000};
    TcnnDims dims;
    dims.conv_channels = {64, 32, 16};
    dims.fc_hidden = 8;
    const auto rows = bench_train(windows, dims, 6, 0xA6);
    const double r2 = linear_fit_r2(rows);
    std::ostringstream os;
    os << "seconds:";
    for (const auto& r : rows) os << " " << r.window << "->" << r.seconds;
    os << " r2=" << r2;
    detail = os.str();
    return rows.size() == 4 && r2 >= 0.9;
}

bool a7_metric_exactness(std::string& detail) {
    bool ok = q_error(1.5, 1.0) == 0.5;
    ok = ok && q_error(1.0, 1.5) == q_error(1.5, 1.0);
    ok = ok && q_error(3.25, 3.25) == 0.0;

    const double arms[] = {2.0, 1.0, 5.0};
    ok = ok && regret(1.0, arms).linear_regret == 0.0;
    ok = ok && regret(1.0, arms).squared_regret == 0.0;

    ok = ok && make_family(FamilyConfig{}).size() == 48;
    FamilyConfig with_cj;
    with_cj.adversarial.push_back({AdversarialArm::Kind::cj, 0, 0});
    ok = ok && make_family(with_cj).size() == 49;

    detail = "q_error(1.5,1)=0.5, symmetry, regret(min)=0, family 48/49";
    return ok;
}

bool a8_structural_oracles(std::string& detail) {
    Rng rng(0xA8);
    FeatureConfig fc;

    // binarize: no single-child nodes on 1000 random trees
    for (int i = 0; i < 1000; ++i) {
        PlanTree t;
        t.root = random_plan_node(rng, fc.vocab_size, 3);
        if (!no_single_child(binarize(t).root)) {
            detail = "binarize left a single-child node at tree " + std::to_string(i);
            return false;
        }
    }

    // forward and tree_conv_layer against the naive references
    double worst_fwd = 0.0, worst_conv = 0.0, worst_pool = 0.0;
    for (int rep = 0; rep < 60; ++rep) {
        PlanTree pt;
        pt.root = random_plan_node(rng, fc.vocab_size, 3);
        const VectorTree v = vectorize(binarize(pt), fc);

        TcnnDims dims;
        dims.input_width = fc.width();
        dims.conv_channels = {16, 8};
        dims.fc_hidden = 6;
        const TcnnModel m = init_model(dims, 0xA800 + rep);

        worst_fwd = std::max(worst_fwd, std::abs(forward(m, v) - ref_forward(m, v)));

        Mat x(v.node_count(), v.width());
        std::vector<Row> xr(v.node_count());
        for (int n = 0; n < v.node_count(); ++n) {
            auto f = v.features(n);
            xr[n].assign(f.begin(), f.end());
            for (int j = 0; j < v.width(); ++j) x(n, j) = f[j];
        }
        const Mat got = tree_conv_layer(v, x, m.conv[0]);
        for (int n = 0; n < v.node_count(); ++n) {
            const Row want = ref_conv_node(v, xr, m.conv[0], n);
            for (int j = 0; j < static_cast<int>(want.size()); ++j)
                worst_conv = std::max(worst_conv, std::abs(got(n, j) - want[j]));
        }

        // dynamic_pool against an independent elementwise max
        const Vec pooled = dynamic_pool(got);
        for (int j = 0; j < got.cols(); ++j) {
            double mx = got(0, j);
            for (int n = 1; n < got.rows(); ++n) mx = std::max(mx, got(n, j));
            worst_pool = std::max(worst_pool, std::abs(pooled(j) - mx));
        }
    }
    std::ostringstream os;
    os << "worst |forward - reference| = " << worst_fwd
       << ", worst conv delta = " << worst_conv << ", worst pool delta = " << worst_pool;
    detail = os.str();
    return worst_fwd < 1e-10 && worst_conv < 1e-10 && worst_pool == 0.0;
}

bool a9_convergence_rule(std::string& detail) {
    Rng rng(0xA9);

    // sequences with a qualifying window stop exactly at the first such epoch
    for (int rep = 0; rep < 500; ++rep) {
        std::vector<double> h;
        double v = rng.uniform(1.0, 100.0);
        const int plateau_at = 5 + static_cast<int>(rng.below(60));
        for (int e = 0; e < 100; ++e) {
            h.push_back(v);
            v *= e < plateau_at ? rng.uniform(0.80, 0.95) : rng.uniform(0.999, 1.0);
        }
        const int got = convergence_epoch(h, 10, 0.01);
        int want = 0;
        for (std::size_t e = 10; e < h.size(); ++e)
            if ((h[e - 10] - h[e]) / h[e - 10] < 0.01) {
                want = static_cast<int>(e) + 1;
                break;
            }
        if (got != want) {
            detail = "fired at " + std::to_string(got) + ", first qualifying epoch is " +
                     std::to_string(want);
            return false;
        }
    }

    // steadily improving sequences never fire within 100 epochs
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> h;
        double v = rng.uniform(1.0, 100.0);
        for (int e = 0; e < 100; ++e) {
            h.push_back(v);
            v *= rng.uniform(0.85, 0.988);  // 10-epoch decrease always > 1%
        }
        if (convergence_epoch(h, 10, 0.01) != 0) {
            detail = "fired on a steadily improving sequence";
            return false;
        }
    }
    detail = "first-qualifying-epoch stop on 500 sequences; no stop on 200 improving ones";
    return true;
}

bool a10_determinism(std::string& detail) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "bao_accept_a10";
    fs::remove_all(dir);

    ExperimentConfig cfg;
    cfg.env = acceptance_env();
    cfg.horizon = 200;
    cfg.seed = 0xA10;
    cfg.bandit.retrain_every_n = 50;
    cfg.bandit.window_k = 100;
    cfg.bandit.dims = reduced_dims();

    cfg.out_dir = (dir / "run1").string();
    run_experiment(cfg);
    cfg.out_dir = (dir / "run2").string();
    run_experiment(cfg);

    const std::string a = read_bytes((dir / "run1" / "episode.jsonl").string());
    const std::string b = read_bytes((dir / "run2" / "episode.jsonl").string());
    fs::remove_all(dir);

    std::ostringstream os;
    os << a.size() << " bytes, " << (a == b ? "identical" : "DIFFER");
    detail = os.str();
    return !a.empty() && a == b;
}

struct Criterion {
    const char* id;
    const char* title;
    std::function<bool(std::string&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {"A1", "gradient correctness vs central finite differences", a1_gradients},
        {"A2", "regret convergence beats random and the best fixed arm",
         a2_regret_convergence},
        {"A3", "poisoned arm is abandoned after its first selection", a3_poisoned_arm},
        {"A4", "drifting arm is adopted then dropped after its switch",
         a4_drift_adaptation},
        {"A5", "bootstrap resample statistics match 1 - 1/e", a5_bootstrap_stats},
        {"A6", "training time is linear in the window size", a6_training_time_linearity},
        {"A7", "metric and family-count exactness", a7_metric_exactness},
        {"A8", "structural oracles: binarize, conv, forward, pooling",
         a8_structural_oracles},
        {"A9", "convergence rule stops at the first qualifying epoch",
         a9_convergence_rule},
        {"A10", "byte-identical episode logs for identical config and seed",
         a10_determinism},
    };

    std::set<std::string> selected;
    for (int i = 1; i < argc; ++i) selected.insert(argv[i]);

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] %s — %s%s%s\n", ok ? "PASS" : "FAIL", c.id, c.title,
                    detail.empty() ? "" : ": ", detail.c_str());
        std::fflush(stdout);
        failures += ok ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
