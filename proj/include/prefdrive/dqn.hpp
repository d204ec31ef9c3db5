#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefdrive/env.hpp"
#include "prefdrive/nn.hpp"
#include "prefdrive/reward.hpp"
#include "prefdrive/rng.hpp"

namespace prefdrive::dqn {

struct Transition {
    env::Observation s;
    env::Action a = env::Action::maintain_speed;
    double r = 0.0;
    env::Observation s_next;
    bool terminal = false; // true termination only; truncation still bootstraps
};

// Fixed-capacity ring with oldest-first eviction and uniform sampling.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(Transition t); // rejects a non-finite reward
    const Transition& sample(Rng& rng) const;
    const Transition& at(std::size_t i) const { return ring_[i]; }

    std::size_t size() const { return ring_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::int64_t inserted() const { return inserted_; }

private:
    std::size_t capacity_;
    std::size_t next_ = 0; // overwrite cursor once full
    std::int64_t inserted_ = 0;
    std::vector<Transition> ring_;
};

struct EpsSchedule {
    double start = 1.0;
    double end = 0.05;
    std::int64_t decay_steps = 0; // 0 = resolve to half of total_steps
};

double epsilon_at(const EpsSchedule& eps, std::int64_t step);

enum class TargetRule {
    double_q,     // online net picks the argmax, target net evaluates it
    paper_literal // target net both picks and evaluates
};

struct TrainConfig {
    double gamma = 0.99;
    EpsSchedule eps;
    int batch_size = 32;
    std::int64_t sync_period = 1000;
    std::size_t buffer_capacity = 100000;
    std::int64_t warmup_steps = 1000;
    std::int64_t total_steps = 50000;
    std::int64_t train_period = 1;    // env steps between gradient updates
    int probe_size = 32;              // held-out observations for the Q-trace
    std::int64_t qtrace_period = 100; // env steps between probe evaluations
    std::uint64_t seed = 1;
    TargetRule target_rule = TargetRule::double_q;
    nn::UpdateRule update_rule = nn::UpdateRule::adam;
    double alpha = 1e-4;

    void validate() const;
    // the configured schedule with decay_steps = 0 resolved to total_steps / 2
    EpsSchedule resolved_eps() const;
};

env::Action select_action(const nn::QNetwork& net, const std::vector<float>& input, double eps,
                          Rng& rng);

std::vector<double> compute_targets(const std::vector<const Transition*>& batch,
                                    const nn::QNetwork& online, const nn::QNetwork& target,
                                    double gamma, TargetRule rule = TargetRule::double_q);

// One batch update; returns the mean squared TD error before the step.
double train_step(nn::QNetwork& online, const nn::QNetwork& target, const ReplayBuffer& buffer,
                  nn::OptimizerState& opt, const TrainConfig& cfg, Rng& rng);

void sync_target(const nn::QNetwork& online, nn::QNetwork& target);

struct QTracePoint {
    std::int64_t step = 0;
    double mean_max_q = 0.0;
};

// Minimal episodic environment interface for the generic training loop.
struct TrainEnv {
    virtual ~TrainEnv() = default;
    virtual env::Observation reset(std::uint64_t episode_seed) = 0;

    struct Outcome {
        env::Observation obs;
        double reward = 0.0;
        bool terminal = false;
        bool truncated = false;
    };
    virtual Outcome step(env::Action a) = 0;
};

struct LoopResult {
    nn::QNetwork online;
    nn::QNetwork target;
    std::vector<QTracePoint> qtrace;
    std::int64_t steps = 0;
    std::int64_t episodes = 0;
};

// Generic loop: act, store, learn after warmup, sync periodically, trace Q on
// a probe set drawn from the earliest observations.
LoopResult run_loop(TrainEnv& environment, const nn::NetConfig& netcfg, const TrainConfig& cfg);

struct EpisodeLogRow {
    std::int64_t episode = 0;
    std::int64_t steps = 0;
    double run_time_s = 0.0; // simulated driving time
    double total_reward = 0.0;
    std::string terminal_cause; // gap | road_end | budget
    double dwell_target_s = 0.0;
    double dwell_nontarget_s = 0.0;
    double dwell_empty_s = 0.0;
};

struct TrainResult {
    nn::QNetwork online;
    std::vector<EpisodeLogRow> episodes;
    std::vector<QTracePoint> qtrace;
};

// Full driving-task training: car-following world, hybrid reward, logging.
// Objects are placed once from cfg.seed and labeled by `labels`; every
// episode restarts from the same location with fresh lead dynamics.
TrainResult run_training(const env::WorldConfig& world, const std::vector<Category>& labels,
                         const reward::SubjectProfile& subject,
                         const reward::RewardConfig& rewards, const nn::NetConfig& netcfg,
                         const TrainConfig& cfg);

// One greedy (ε = 0) rollout on the fixed-placement world, for evaluation.
// The returned row has episode = 0; the caller renumbers.
EpisodeLogRow evaluate_episode(const env::WorldConfig& world, const std::vector<Category>& labels,
                               const reward::SubjectProfile& subject,
                               const reward::RewardConfig& rewards, const nn::QNetwork& net,
                               std::uint64_t world_seed, std::uint64_t episode_seed);

std::string episode_log_to_csv(const std::vector<EpisodeLogRow>& rows);
std::string qtrace_to_csv(const std::vector<QTracePoint>& points);
std::vector<EpisodeLogRow> episode_log_from_csv(const std::string& csv);
std::vector<QTracePoint> qtrace_from_csv(const std::string& csv);

} // namespace prefdrive::dqn
