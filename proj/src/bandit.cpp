#include "bao/bandit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "bao/logging.hpp"
#include "json.hpp"

namespace bao {

// ---------------------------------------------------------------------------
// experience

Experience::Experience(std::size_t window_k) : window_k_(window_k) {
    if (window_k_ < 1) throw std::invalid_argument("Experience: window_k must be >= 1");
}

void Experience::record(std::shared_ptr<const VectorTree> tree, std::int64_t query_id,
                        int arm_id, double performance, std::int64_t timestamp) {
    if (performance < 0.0)
        throw std::invalid_argument("Experience: negative performance");
    if (!tree) throw std::invalid_argument("Experience: null plan");
    entries_.push_back(ExperienceEntry{std::move(tree), performance, query_id, arm_id,
                                       timestamp});
    while (entries_.size() > window_k_) entries_.pop_front();
}

std::vector<const ExperienceEntry*> bootstrap_sample(const Experience& experience,
                                                     Rng& rng) {
    if (experience.empty())
        throw std::invalid_argument("bootstrap_sample: empty experience");
    const std::size_t n = experience.size();
    std::vector<const ExperienceEntry*> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = &experience.entry(static_cast<std::size_t>(rng.below(n)));
    return out;
}

// ---------------------------------------------------------------------------
// arm selection

ArmChoice select_arm(const TcnnModel& model, std::span<const VectorTree> candidates) {
    if (candidates.empty()) throw std::invalid_argument("select_arm: no candidate arms");

    std::vector<const VectorTree*> ptrs(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) ptrs[i] = &candidates[i];
    const std::vector<double> raw = forward_batch(model, ptrs);

    // performance is non-negative by definition; a raw output below zero is
    // an artifact of extrapolation and clamps to "instant"
    ArmChoice choice;
    choice.all_predictions.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        choice.all_predictions[i] = std::expm1(std::max(raw[i], 0.0));

    choice.arm_id = 0;
    choice.predicted_performance = choice.all_predictions[0];
    for (std::size_t i = 1; i < choice.all_predictions.size(); ++i)
        if (choice.all_predictions[i] < choice.predicted_performance) {
            choice.predicted_performance = choice.all_predictions[i];
            choice.arm_id = static_cast<int>(i);
        }
    return choice;
}

// ---------------------------------------------------------------------------
// steering policy

SteeringPolicy::SteeringPolicy(const BanditConfig& config, int feature_width)
    : config_(config),
      experience_(config.window_k),
      sample_rng_(Rng(config.rng_seed).substream(0x7261696E)) {
    if (config_.retrain_every_n < 1)
        throw std::invalid_argument("SteeringPolicy: retrain_every_n must be >= 1");
    if (config_.overlap_lag < 0)
        throw std::invalid_argument("SteeringPolicy: overlap_lag must be >= 0");
    config_.dims.input_width = feature_width;
    model_ = std::make_shared<const TcnnModel>(
        init_model(config_.dims, Rng(config_.rng_seed).substream(0x696E6974).next_u64()));
}

SteeringPolicy::~SteeringPolicy() {
    if (pending_) pending_->future.wait();
}

std::shared_ptr<const TcnnModel> SteeringPolicy::model() const {
    return std::atomic_load(&model_);
}

void SteeringPolicy::record_outcome(const VectorTree& tree, std::int64_t query_id,
                                    int arm_id, double performance,
                                    std::int64_t timestamp) {
    experience_.record(std::make_shared<VectorTree>(tree), query_id, arm_id, performance,
                       timestamp);
}

void SteeringPolicy::count_executed_query() {
    ++executed_;
    ++since_trigger_;
}

void SteeringPolicy::set_retrain_cadence(int every_n) {
    if (every_n < 1)
        throw std::invalid_argument("set_retrain_cadence: cadence must be >= 1");
    config_.retrain_every_n = every_n;
}

TrainResult SteeringPolicy::run_training(
    std::vector<std::shared_ptr<const VectorTree>> trees, std::vector<double> perfs,
    std::uint64_t stream) const {
    std::vector<const VectorTree*> ptrs(trees.size());
    for (std::size_t i = 0; i < trees.size(); ++i) ptrs[i] = trees[i].get();
    TcnnModel fresh =
        init_model(config_.dims, Rng(config_.rng_seed).substream(stream).next_u64());
    Rng shuffle_rng = Rng(config_.rng_seed).substream(stream ^ 0x73687566);
    return train(std::move(fresh), ptrs, perfs, config_.train, shuffle_rng);
}

RetrainOutcome SteeringPolicy::maybe_retrain() {
    if (since_trigger_ < config_.retrain_every_n) return RetrainOutcome::not_due;
    since_trigger_ = 0;
    if (experience_.empty()) return RetrainOutcome::skipped_empty;

    // training-set snapshot: bootstrap resample, or the window itself in
    // greedy mode
    std::vector<std::shared_ptr<const VectorTree>> trees;
    std::vector<double> perfs;
    if (config_.exploration == BanditConfig::Exploration::thompson_bootstrap) {
        for (const ExperienceEntry* e : bootstrap_sample(experience_, sample_rng_)) {
            trees.push_back(e->tree);
            perfs.push_back(e->performance);
        }
    } else {
        for (std::size_t i = 0; i < experience_.size(); ++i) {
            trees.push_back(experience_.entry(i).tree);
            perfs.push_back(experience_.entry(i).performance);
        }
    }

    const int next_version = version_ + 1;
    const std::uint64_t stream = 0x4D000000ULL + static_cast<std::uint64_t>(next_version);

    if (config_.overlap_train) {
        if (pending_) poll_swap(true);  // never more than one trainer in flight
        PendingTrain p;
        p.version = next_version;
        p.swap_at = executed_ + config_.overlap_lag;
        p.future = std::async(std::launch::async,
                              [this, t = std::move(trees), y = std::move(perfs), stream]() {
                                  return run_training(std::move(t), std::move(y), stream);
                              });
        pending_ = std::move(p);
        return RetrainOutcome::launched;
    }

    try {
        TrainResult result = run_training(std::move(trees), std::move(perfs), stream);
        last_loss_history_ = result.epoch_loss;
        std::atomic_store(&model_,
                          std::shared_ptr<const TcnnModel>(
                              std::make_shared<TcnnModel>(std::move(result.model))));
        version_ = next_version;
        return RetrainOutcome::retrained;
    } catch (const std::exception& e) {
        log::warn(std::string("retrain failed, keeping previous model: ") + e.what());
        return RetrainOutcome::failed;
    }
}

bool SteeringPolicy::poll_swap(bool force) {
    if (!pending_) return false;
    if (!force && executed_ < pending_->swap_at) return false;
    try {
        TrainResult result = pending_->future.get();
        last_loss_history_ = result.epoch_loss;
        std::atomic_store(&model_,
                          std::shared_ptr<const TcnnModel>(
                              std::make_shared<TcnnModel>(std::move(result.model))));
        version_ = pending_->version;
        pending_.reset();
        return true;
    } catch (const std::exception& e) {
        log::warn(std::string("overlapped retrain failed, keeping previous model: ") +
                  e.what());
        pending_.reset();
        return false;
    }
}

// ---------------------------------------------------------------------------
// episode driver

EpisodeLog run_episode(EpisodeEnv& env, const BanditConfig& config,
                       const EpisodeOptions& options,
                       const std::function<void(int, const TcnnModel&)>& on_retrain) {
    SteeringPolicy policy(config, env.feature_width());
    Rng explore_rng = Rng(config.rng_seed).substream(0x636F6C64);
    return run_episode(env, policy, explore_rng, options, on_retrain);
}

EpisodeLog run_episode(EpisodeEnv& env, SteeringPolicy& policy, Rng& explore_rng,
                       const EpisodeOptions& options,
                       const std::function<void(int, const TcnnModel&)>& on_retrain) {
    if (options.horizon < 1) throw std::invalid_argument("run_episode: horizon must be >= 1");

    const int arms = env.arm_count();
    EpisodeLog log;
    log.arm_count = arms;

    if (options.mode == PolicyMode::fixed_arm &&
        (options.fixed_arm_id < 0 || options.fixed_arm_id >= arms))
        throw std::invalid_argument("run_episode: fixed arm id out of range");

    for (int t = 0; t < options.horizon; ++t) {
        try {
            if (!env.next_query()) break;

            if (options.mode == PolicyMode::steer) policy.poll_swap();

            const std::vector<VectorTree>& plans = env.candidate_plans();
            const GroundTruth& truth = env.ground_truth();

            EpisodeRecord rec;
            rec.query_id = env.query_id();
            rec.optimal_performance = truth.optimal_performance;
            rec.optimal_arm_id = truth.optimal_arm_id;

            switch (options.mode) {
                case PolicyMode::steer: {
                    const auto model = policy.model();
                    ArmChoice choice = select_arm(*model, plans);
                    rec.predictions = std::move(choice.all_predictions);
                    rec.model_version = policy.model_version();
                    if (policy.trained()) {
                        rec.arm_id = choice.arm_id;
                    } else {
                        rec.arm_id = static_cast<int>(explore_rng.below(arms));
                        rec.exploratory = true;
                    }
                    break;
                }
                case PolicyMode::fixed_arm: rec.arm_id = options.fixed_arm_id; break;
                case PolicyMode::oracle: rec.arm_id = truth.optimal_arm_id; break;
                case PolicyMode::random:
                    rec.arm_id = static_cast<int>(explore_rng.below(arms));
                    break;
            }

            rec.performance = env.execute(rec.arm_id);

            if (options.mode == PolicyMode::steer) {
                policy.record_outcome(plans[rec.arm_id], rec.query_id, rec.arm_id,
                                      rec.performance, t);
                policy.count_executed_query();
                const RetrainOutcome outcome = policy.maybe_retrain();
                if (outcome == RetrainOutcome::retrained) {
                    ++log.retrain_count;
                    if (on_retrain) on_retrain(policy.model_version(), *policy.model());
                } else if (outcome == RetrainOutcome::launched) {
                    ++log.retrain_count;
                }
            }

            log.records.push_back(std::move(rec));
        } catch (const std::exception& e) {
            log.aborted = true;
            log.error = e.what();
            log::error(std::string("episode aborted at query ") + std::to_string(t) +
                       ": " + e.what());
            break;
        }
    }

    if (options.mode == PolicyMode::steer && policy.poll_swap(true) && on_retrain)
        on_retrain(policy.model_version(), *policy.model());
    return log;
}

// ---------------------------------------------------------------------------
// JSONL

void write_episode_jsonl(const EpisodeLog& log, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    for (const EpisodeRecord& r : log.records) {
        nlohmann::ordered_json j;
        j["query_id"] = r.query_id;
        j["arm_id"] = r.arm_id;
        j["model_version"] = r.model_version;
        j["exploratory"] = r.exploratory;
        j["performance"] = r.performance;
        j["optimal_performance"] = r.optimal_performance;
        j["optimal_arm_id"] = r.optimal_arm_id;
        j["predictions"] = r.predictions;
        os << j.dump() << '\n';
    }
}

EpisodeLog read_episode_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    EpisodeLog log;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("episode log line " + std::to_string(lineno) + ": " +
                                     e.what());
        }
        EpisodeRecord r;
        r.query_id = j.at("query_id").get<std::int64_t>();
        r.arm_id = j.at("arm_id").get<int>();
        r.model_version = j.at("model_version").get<int>();
        r.exploratory = j.at("exploratory").get<bool>();
        r.performance = j.at("performance").get<double>();
        r.optimal_performance = j.at("optimal_performance").get<double>();
        r.optimal_arm_id = j.at("optimal_arm_id").get<int>();
        r.predictions = j.at("predictions").get<std::vector<double>>();
        log.arm_count = std::max<int>(log.arm_count, static_cast<int>(r.predictions.size()));
        log.retrain_count = std::max(log.retrain_count, r.model_version);
        log.records.push_back(std::move(r));
    }
    return log;
}

}  // namespace bao
