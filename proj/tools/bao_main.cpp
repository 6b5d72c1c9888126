#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bao/experiment.hpp"
#include "bao/logging.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

bao::ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) return bao::ExperimentConfig{};
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config file " + path);
    nlohmann::json j;
    is >> j;
    return bao::experiment_config_from_json(j);
}

struct CommonFlags {
    std::string config_path;
    std::uint64_t seed = 0;
    int horizon = 0;
    std::string mode;
    std::string out;
    bool overlap = false;

    CLI::Option* seed_opt = nullptr;
    CLI::Option* horizon_opt = nullptr;
    CLI::Option* mode_opt = nullptr;
    CLI::Option* out_opt = nullptr;
    CLI::Option* overlap_opt = nullptr;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "experiment config JSON");
        seed_opt = app->add_option("--seed", seed, "run seed (overrides config)");
        horizon_opt = app->add_option("--horizon", horizon, "query count");
        mode_opt = app->add_option("--mode", mode, "steer|fixed-arm:<id>|oracle|random");
        out_opt = app->add_option("--out", out, "output directory");
        overlap_opt = app->add_flag("--overlap-train", overlap,
                                    "train on a worker thread, swap on completion");
    }

    // config file first, explicit flags win
    bao::ExperimentConfig resolve() const {
        bao::ExperimentConfig c = load_config(config_path);
        if (seed_opt->count()) c.seed = seed;
        if (horizon_opt->count()) c.horizon = horizon;
        if (mode_opt->count()) bao::parse_mode(mode, c);
        if (out_opt->count()) c.out_dir = out;
        if (overlap_opt->count()) c.bandit.overlap_train = overlap;
        return c;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"learned per-query hint-set steering over a simulated optimizer"};
    app.require_subcommand(1);

    CommonFlags run_flags;
    auto* run_cmd = app.add_subcommand("run", "run an experiment against the simulator");
    run_flags.attach(run_cmd);

    CommonFlags replay_flags;
    std::string trace_path;
    auto* replay_cmd = app.add_subcommand("replay", "drive the loop from a recorded trace");
    replay_cmd->add_option("--trace", trace_path, "trace JSONL path")->required();
    replay_flags.attach(replay_cmd);

    auto* bench_cmd = app.add_subcommand("bench-train", "time training per window size");
    std::vector<std::size_t> windows{250, 500, 1000, 2000};
    int bench_epochs = 4;
    std::string bench_out = "out";
    std::uint64_t bench_seed = 1;
    std::vector<int> bench_channels{64, 32, 16};
    int bench_fc = 8;
    bench_cmd->add_option("--windows", windows, "window sizes")->delimiter(',');
    bench_cmd->add_option("--epochs", bench_epochs, "epochs per measurement");
    bench_cmd->add_option("--out", bench_out, "output directory");
    bench_cmd->add_option("--seed", bench_seed, "seed");
    bench_cmd->add_option("--conv-channels", bench_channels, "conv layer widths")
        ->delimiter(',');
    bench_cmd->add_option("--fc-hidden", bench_fc, "fc hidden width");

    auto* report_cmd = app.add_subcommand("report", "regenerate CSVs from an episode log");
    std::string report_log;
    std::string report_out = "out";
    report_cmd->add_option("--log", report_log, "episode JSONL path")->required();
    report_cmd->add_option("--out", report_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (run_cmd->parsed()) {
            const bao::ExperimentConfig config = run_flags.resolve();
            const bao::RunSummary summary = bao::run_experiment(config);
            std::cout << summary.one_line() << '\n';
            return summary.aborted ? kExitRuntime : kExitOk;
        }
        if (replay_cmd->parsed()) {
            const bao::ExperimentConfig config = replay_flags.resolve();
            const bao::RunSummary summary = bao::replay_experiment(trace_path, config);
            std::cout << summary.one_line() << '\n';
            return summary.aborted ? kExitRuntime : kExitOk;
        }
        if (bench_cmd->parsed()) {
            bao::TcnnDims dims;
            dims.conv_channels = bench_channels;
            dims.fc_hidden = bench_fc;
            const auto rows = bao::bench_train(windows, dims, bench_epochs, bench_seed);
            std::filesystem::create_directories(bench_out);
            const std::string csv =
                (std::filesystem::path(bench_out) / "bench_train.csv").string();
            bao::write_bench_csv(csv, rows);
            for (const auto& r : rows)
                std::cout << "window=" << r.window << " seconds=" << r.seconds << '\n';
            std::cout << "r2=" << bao::linear_fit_r2(rows) << " csv=" << csv << '\n';
            return kExitOk;
        }
        if (report_cmd->parsed()) {
            const bao::RunSummary summary = bao::report_experiment(report_log, report_out);
            std::cout << summary.one_line() << '\n';
            return kExitOk;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitConfig;
}
