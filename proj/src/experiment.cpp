#include "bao/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bao/logging.hpp"
#include "bao/metrics.hpp"

namespace bao {

namespace {

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.convergence_window = j.value("convergence_window", c.convergence_window);
    c.convergence_threshold = j.value("convergence_threshold", c.convergence_threshold);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"convergence_window", c.convergence_window},
            {"convergence_threshold", c.convergence_threshold},
            {"learning_rate", c.learning_rate},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_eps", c.adam_eps}};
}

}  // namespace

void parse_mode(const std::string& text, ExperimentConfig& config) {
    if (text == "steer") {
        config.mode = PolicyMode::steer;
    } else if (text == "oracle") {
        config.mode = PolicyMode::oracle;
    } else if (text == "random") {
        config.mode = PolicyMode::random;
    } else if (text.rfind("fixed-arm:", 0) == 0) {
        config.mode = PolicyMode::fixed_arm;
        try {
            config.fixed_arm_id = std::stoi(text.substr(10));
        } catch (const std::exception&) {
            throw std::invalid_argument("mode: bad arm id in '" + text + "'");
        }
    } else {
        throw std::invalid_argument("mode: expected steer|fixed-arm:<id>|oracle|random, got '" +
                                    text + "'");
    }
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.horizon = j.value("horizon", c.horizon);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.save_checkpoints = j.value("save_checkpoints", c.save_checkpoints);
    if (j.contains("mode")) parse_mode(j.at("mode").get<std::string>(), c);

    if (j.contains("env")) c.env = env_config_from_json(j.at("env"));

    if (j.contains("bandit")) {
        const auto& b = j.at("bandit");
        c.bandit.retrain_every_n = b.value("retrain_every_n", c.bandit.retrain_every_n);
        c.bandit.window_k = b.value("window_k", c.bandit.window_k);
        c.bandit.overlap_train = b.value("overlap_train", c.bandit.overlap_train);
        c.bandit.overlap_lag = b.value("overlap_lag", c.bandit.overlap_lag);
        const std::string expl = b.value("exploration", std::string("thompson"));
        if (expl == "thompson")
            c.bandit.exploration = BanditConfig::Exploration::thompson_bootstrap;
        else if (expl == "greedy")
            c.bandit.exploration = BanditConfig::Exploration::greedy;
        else
            throw std::invalid_argument("bandit.exploration: expected thompson|greedy");
    }

    if (j.contains("tcnn")) {
        const auto& t = j.at("tcnn");
        if (t.contains("conv_channels"))
            c.bandit.dims.conv_channels = t.at("conv_channels").get<std::vector<int>>();
        c.bandit.dims.fc_hidden = t.value("fc_hidden", c.bandit.dims.fc_hidden);
        if (t.contains("train")) c.bandit.train = train_config_from_json(t.at("train"), c.bandit.train);
    }

    if (j.contains("features")) {
        c.features.vocab_size = j.at("features").value("vocab_size", c.features.vocab_size);
        c.features.include_cache =
            j.at("features").value("include_cache", c.features.include_cache);
    }
    return c;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    std::string mode;
    switch (c.mode) {
        case PolicyMode::steer: mode = "steer"; break;
        case PolicyMode::oracle: mode = "oracle"; break;
        case PolicyMode::random: mode = "random"; break;
        case PolicyMode::fixed_arm: mode = "fixed-arm:" + std::to_string(c.fixed_arm_id); break;
    }
    return {{"horizon", c.horizon},
            {"seed", c.seed},
            {"out_dir", c.out_dir},
            {"mode", mode},
            {"save_checkpoints", c.save_checkpoints},
            {"env", env_config_to_json(c.env)},
            {"bandit",
             {{"retrain_every_n", c.bandit.retrain_every_n},
              {"window_k", c.bandit.window_k},
              {"overlap_train", c.bandit.overlap_train},
              {"overlap_lag", c.bandit.overlap_lag},
              {"exploration",
               c.bandit.exploration == BanditConfig::Exploration::thompson_bootstrap
                   ? "thompson"
                   : "greedy"}}},
            {"tcnn",
             {{"conv_channels", c.bandit.dims.conv_channels},
              {"fc_hidden", c.bandit.dims.fc_hidden},
              {"train", train_config_to_json(c.bandit.train)}}},
            {"features",
             {{"vocab_size", c.features.vocab_size},
              {"include_cache", c.features.include_cache}}}};
}

std::string RunSummary::one_line() const {
    std::ostringstream os;
    os.precision(6);
    os << "queries=" << queries << " total_performance=" << total_performance
       << " mean_regret=" << mean_linear_regret
       << " median_regret=" << median_linear_regret << " retrains=" << retrain_count;
    if (aborted) os << " ABORTED";
    return os.str();
}

RunSummary summarize(const EpisodeLog& log) {
    RunSummary s;
    s.queries = log.records.size();
    s.retrain_count = log.retrain_count;
    s.aborted = log.aborted;
    if (log.records.empty()) return s;

    std::vector<double> regrets;
    regrets.reserve(log.records.size());
    for (const EpisodeRecord& r : log.records) {
        s.total_performance += r.performance;
        regrets.push_back(r.performance - r.optimal_performance);
        s.mean_linear_regret += regrets.back();
    }
    s.mean_linear_regret /= static_cast<double>(regrets.size());
    const double p50[] = {0.5};
    s.median_linear_regret = percentiles(regrets, p50)[0];
    return s;
}

namespace {

void write_artifacts(const EpisodeLog& log, const ExperimentConfig& config,
                     const RunSummary& summary) {
    namespace fs = std::filesystem;
    fs::create_directories(config.out_dir);
    const fs::path out(config.out_dir);

    write_episode_jsonl(log, (out / "episode.jsonl").string());

    std::vector<RegretSample> samples;
    std::vector<double> latencies;
    std::vector<int> chosen;
    samples.reserve(log.records.size());
    for (const EpisodeRecord& r : log.records) {
        RegretSample s;
        s.query_id = r.query_id;
        s.chosen_performance = r.performance;
        s.optimal_performance = r.optimal_performance;
        s.linear_regret = r.performance - r.optimal_performance;
        s.squared_regret = s.linear_regret * s.linear_regret;
        samples.push_back(s);
        latencies.push_back(r.performance);
        chosen.push_back(r.arm_id);
    }
    write_regret_csv((out / "regret.csv").string(), samples);
    if (!latencies.empty()) {
        const double ps[] = {0.5, 0.95, 0.99, 0.995};
        write_percentile_csv((out / "percentiles.csv").string(), latencies, ps);
    }
    write_selection_frequency_csv((out / "selection_frequency.csv").string(), chosen,
                                  log.arm_count);

    std::ofstream sf(out / "summary.txt");
    sf << summary.one_line() << '\n';
    std::ofstream cf(out / "config.json");
    cf << experiment_config_to_json(config).dump(2) << '\n';
}

RunSummary drive(EpisodeEnv& env, const ExperimentConfig& config, EpisodeLog* log_out) {
    BanditConfig bandit = config.bandit;
    bandit.rng_seed = Rng(config.seed).substream(0xB0).next_u64();

    EpisodeOptions options;
    options.horizon = config.horizon;
    options.mode = config.mode;
    options.fixed_arm_id = config.fixed_arm_id;

    std::function<void(int, const TcnnModel&)> on_retrain;
    if (config.save_checkpoints && config.mode == PolicyMode::steer) {
        std::filesystem::create_directories(config.out_dir);
        const std::string dir = config.out_dir;
        const TrainConfig train = bandit.train;
        on_retrain = [dir, train](int version, const TcnnModel& model) {
            char name[32];
            std::snprintf(name, sizeof name, "model_v%04d.bin", version);
            save_checkpoint(model, train, (std::filesystem::path(dir) / name).string());
        };
    }

    EpisodeLog log = run_episode(env, bandit, options, on_retrain);
    const RunSummary summary = summarize(log);
    write_artifacts(log, config, summary);
    if (log_out) *log_out = std::move(log);
    return summary;
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& config, EpisodeLog* log_out) {
    const SimEnv env(config.env);
    if (config.mode == PolicyMode::fixed_arm &&
        (config.fixed_arm_id < 0 || config.fixed_arm_id >= env.family().size()))
        throw std::invalid_argument("fixed arm id out of range for this family");

    SimEpisodeEnv episode(env, Rng(config.seed).substream(0xE0).next_u64());
    return drive(episode, config, log_out);
}

RunSummary replay_experiment(const std::string& trace_path, const ExperimentConfig& config,
                             EpisodeLog* log_out) {
    TraceEpisodeEnv episode(load_trace(trace_path), config.features);
    return drive(episode, config, log_out);
}

RunSummary report_experiment(const std::string& log_path, const std::string& out_dir) {
    const EpisodeLog log = read_episode_jsonl(log_path);
    ExperimentConfig config;
    config.out_dir = out_dir;
    config.save_checkpoints = false;
    const RunSummary summary = summarize(log);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path out(out_dir);

    std::vector<RegretSample> samples;
    std::vector<double> latencies;
    std::vector<int> chosen;
    for (const EpisodeRecord& r : log.records) {
        RegretSample s;
        s.query_id = r.query_id;
        s.chosen_performance = r.performance;
        s.optimal_performance = r.optimal_performance;
        s.linear_regret = r.performance - r.optimal_performance;
        s.squared_regret = s.linear_regret * s.linear_regret;
        samples.push_back(s);
        latencies.push_back(r.performance);
        chosen.push_back(r.arm_id);
    }
    write_regret_csv((out / "regret.csv").string(), samples);
    if (!latencies.empty()) {
        const double ps[] = {0.5, 0.95, 0.99, 0.995};
        write_percentile_csv((out / "percentiles.csv").string(), latencies, ps);
    }
    write_selection_frequency_csv((out / "selection_frequency.csv").string(), chosen,
                                  log.arm_count);
    std::ofstream sf(out / "summary.txt");
    sf << summary.one_line() << '\n';
    return summary;
}

// ---------------------------------------------------------------------------
// training-time benchmark

namespace {

// Synthetic experience: left-deep chains with random operators and
// magnitudes, shaped like simulator plans.
VectorTree synthetic_tree(Rng& rng, const FeatureConfig& fc) {
    const int rels = 2 + static_cast<int>(rng.below(5));
    PlanNode acc;
    acc.op = sim_op::seq_scan + static_cast<int>(rng.below(3));
    acc.cardinality = rng.lognormal(8.0, 2.0);
    acc.cost = rng.lognormal(9.0, 2.0);
    acc.cache_fraction = rng.uniform();
    for (int i = 1; i < rels; ++i) {
        PlanNode scan;
        scan.op = sim_op::seq_scan + static_cast<int>(rng.below(3));
        scan.cardinality = rng.lognormal(8.0, 2.0);
        scan.cost = rng.lognormal(9.0, 2.0);
        scan.cache_fraction = rng.uniform();
        PlanNode join;
        join.op = sim_op::hash_join + static_cast<int>(rng.below(3));
        join.cardinality = rng.lognormal(8.0, 2.0);
        join.cost = rng.lognormal(10.0, 2.0);
        join.children.push_back(std::move(acc));
        join.children.push_back(std::move(scan));
        acc = std::move(join);
    }
    if (rng.uniform() < 0.4) {
        PlanNode agg;
        agg.op = sim_op::aggregate;
        agg.cardinality = rng.lognormal(4.0, 2.0);
        agg.cost = rng.lognormal(10.0, 2.0);
        agg.children.push_back(std::move(acc));
        acc = std::move(agg);
    }
    PlanTree t;
    t.root = std::move(acc);
    return vectorize(binarize(t), fc);
}

}  // namespace

std::vector<BenchRow> bench_train(std::span<const std::size_t> windows,
                                  const TcnnDims& dims, int epochs, std::uint64_t seed) {
    if (windows.empty()) throw std::invalid_argument("bench_train: no window sizes");
    for (std::size_t w : windows)
        if (w < 1) throw std::invalid_argument("bench_train: window sizes must be >= 1");

    const std::size_t max_w = *std::max_element(windows.begin(), windows.end());
    FeatureConfig fc;
    fc.vocab_size = sim_op::vocab_size;

    Rng rng(seed);
    std::vector<VectorTree> trees;
    std::vector<double> perfs;
    trees.reserve(max_w);
    for (std::size_t i = 0; i < max_w; ++i) {
        trees.push_back(synthetic_tree(rng, fc));
        perfs.push_back(rng.lognormal(0.5, 1.2));
    }

    TcnnDims d = dims;
    d.input_width = fc.width();
    TrainConfig tc;
    tc.max_epochs = epochs;
    tc.convergence_window = epochs + 1;  // never fires; isolate window scaling

    std::vector<BenchRow> rows;
    for (std::size_t w : windows) {
        std::vector<const VectorTree*> ptrs(w);
        for (std::size_t i = 0; i < w; ++i) ptrs[i] = &trees[i];
        TcnnModel model = init_model(d, rng.next_u64());
        Rng train_rng = rng.substream(w);

        const auto t0 = std::chrono::steady_clock::now();
        (void)train(std::move(model), ptrs, std::span(perfs.data(), w), tc, train_rng);
        const auto t1 = std::chrono::steady_clock::now();
        rows.push_back({w, std::chrono::duration<double>(t1 - t0).count()});
    }
    return rows;
}

void write_bench_csv(const std::string& path, std::span<const BenchRow> rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.precision(9);
    os << "window,seconds\n";
    for (const BenchRow& r : rows) os << r.window << ',' << r.seconds << '\n';
}

double linear_fit_r2(std::span<const BenchRow> rows) {
    const double n = static_cast<double>(rows.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const BenchRow& r : rows) {
        const double x = static_cast<double>(r.window);
        sx += x;
        sy += r.seconds;
        sxx += x * x;
        sxy += x * r.seconds;
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) return 0.0;
    const double slope = (n * sxy - sx * sy) / denom;
    const double intercept = (sy - slope * sx) / n;

    const double mean_y = sy / n;
    double ss_res = 0, ss_tot = 0;
    for (const BenchRow& r : rows) {
        const double x = static_cast<double>(r.window);
        const double e = r.seconds - (slope * x + intercept);
        ss_res += e * e;
        const double d = r.seconds - mean_y;
        ss_tot += d * d;
    }
    if (ss_tot == 0.0) return 1.0;
    return 1.0 - ss_res / ss_tot;
}

}  // namespace bao
