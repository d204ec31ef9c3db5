#include "prefdrive/dqn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "prefdrive/io.hpp"

namespace prefdrive::dqn {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("replay buffer: capacity must be positive");
    ring_.reserve(std::min<std::size_t>(capacity_, 4096));
}

void ReplayBuffer::push(Transition t) {
    if (!std::isfinite(t.r)) throw ConfigError("replay buffer: non-finite reward");
    if (ring_.size() < capacity_) {
        ring_.push_back(std::move(t));
    } else {
        ring_[next_] = std::move(t);
        next_ = (next_ + 1) % capacity_;
    }
    inserted_ += 1;
}

const Transition& ReplayBuffer::sample(Rng& rng) const {
    if (ring_.empty()) throw UsageError("replay buffer: sampling from an empty buffer");
    return ring_[rng.uniform_int(ring_.size())];
}

double epsilon_at(const EpsSchedule& eps, std::int64_t step) {
    if (eps.decay_steps <= 0 || step >= eps.decay_steps) return eps.end;
    const double frac = static_cast<double>(step) / static_cast<double>(eps.decay_steps);
    return eps.start + (eps.end - eps.start) * frac;
}

void TrainConfig::validate() const {
    if (!(gamma >= 0.0) || gamma >= 1.0) throw ConfigError("train config: gamma outside [0,1)");
    if (eps.start < 0.0 || eps.start > 1.0 || eps.end < 0.0 || eps.end > 1.0)
        throw ConfigError("train config: epsilon bounds outside [0,1]");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be positive");
    if (sync_period < 1) throw ConfigError("train config: sync_period must be >= 1");
    if (buffer_capacity < static_cast<std::size_t>(batch_size))
        throw ConfigError("train config: buffer capacity below batch size");
    if (warmup_steps < 0) throw ConfigError("train config: negative warmup");
    if (total_steps < 1) throw ConfigError("train config: total_steps must be positive");
    if (train_period < 1) throw ConfigError("train config: train_period must be >= 1");
    if (probe_size < 1) throw ConfigError("train config: probe_size must be positive");
    if (qtrace_period < 1) throw ConfigError("train config: qtrace_period must be >= 1");
    if (!(alpha > 0.0)) throw ConfigError("train config: alpha must be positive");
}

EpsSchedule TrainConfig::resolved_eps() const {
    EpsSchedule out = eps;
    if (out.decay_steps <= 0) out.decay_steps = std::max<std::int64_t>(1, total_steps / 2);
    return out;
}

namespace {

int argmax3(const std::vector<float>& q) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(q.size()); ++i)
        if (q[static_cast<std::size_t>(i)] > q[static_cast<std::size_t>(best)]) best = i;
    return best;
}

double probe_mean_max_q(const nn::QNetwork& net, const std::vector<std::vector<float>>& probe) {
    if (probe.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& input : probe) {
        const auto q = nn::forward(net, input);
        sum += q[static_cast<std::size_t>(argmax3(q))];
    }
    return sum / static_cast<double>(probe.size());
}

} // namespace

env::Action select_action(const nn::QNetwork& net, const std::vector<float>& input, double eps,
                          Rng& rng) {
    if (eps < 0.0 || eps > 1.0) throw UsageError("select_action: epsilon outside [0,1]");
    if (rng.uniform01() < eps)
        return static_cast<env::Action>(rng.uniform_int(env::kNumActions));
    return static_cast<env::Action>(argmax3(nn::forward(net, input)));
}

std::vector<double> compute_targets(const std::vector<const Transition*>& batch,
                                    const nn::QNetwork& online, const nn::QNetwork& target,
                                    double gamma, TargetRule rule) {
    if (batch.empty()) throw UsageError("compute_targets: empty batch");
    std::vector<double> targets;
    targets.reserve(batch.size());
    for (const Transition* t : batch) {
        if (t->terminal) {
            targets.push_back(t->r);
            continue;
        }
        const auto input = env::observation_input(t->s_next);
        const auto q_target = nn::forward(target, input);
        const int chosen = rule == TargetRule::double_q ? argmax3(nn::forward(online, input))
                                                        : argmax3(q_target);
        targets.push_back(t->r + gamma * q_target[static_cast<std::size_t>(chosen)]);
    }
    return targets;
}

double train_step(nn::QNetwork& online, const nn::QNetwork& target, const ReplayBuffer& buffer,
                  nn::OptimizerState& opt, const TrainConfig& cfg, Rng& rng) {
    if (buffer.size() < static_cast<std::size_t>(cfg.batch_size))
        throw UsageError("train_step: buffer holds fewer transitions than one batch");

    std::vector<const Transition*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(&buffer.sample(rng));
    const auto targets = compute_targets(batch, online, target, cfg.gamma, cfg.target_rule);

    auto grads = nn::zero_gradients(online.cfg);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto cache = nn::forward_full(online, env::observation_input(batch[i]->s));
        const auto action = static_cast<std::size_t>(batch[i]->a);
        const double delta = cache.q[action] - targets[i];
        loss += delta * delta;
        std::vector<float> gq(cache.q.size(), 0.0f);
        gq[action] = static_cast<float>(std::clamp(delta, -1.0, 1.0) /
                                        static_cast<double>(batch.size()));
        nn::accumulate(grads, nn::backward(online, cache, gq));
    }
    nn::apply_update(online, grads, opt);
    return loss / static_cast<double>(batch.size());
}

void sync_target(const nn::QNetwork& online, nn::QNetwork& target) { target = online; }

namespace {

struct TrainerCore {
    nn::QNetwork online;
    nn::QNetwork target;
    nn::OptimizerState opt;
    ReplayBuffer buffer;
    Rng act_rng;
    Rng batch_rng;
    EpsSchedule eps;
    std::vector<std::vector<float>> probe;
    std::vector<QTracePoint> qtrace;
    std::int64_t global = 0;

    TrainerCore(const nn::NetConfig& netcfg, const TrainConfig& cfg)
        : online(nn::init_network(netcfg, Rng(cfg.seed).derive("net-init").seed())),
          target(online),
          buffer(cfg.buffer_capacity),
          act_rng(Rng(cfg.seed).derive("act")),
          batch_rng(Rng(cfg.seed).derive("batch")),
          eps(cfg.resolved_eps()) {
        opt.rule = cfg.update_rule;
        opt.alpha = cfg.alpha;
    }

    // bookkeeping after one environment step has been pushed into the buffer
    void after_env_step(const TrainConfig& cfg) {
        global += 1;
        if (global >= cfg.warmup_steps &&
            buffer.size() >= static_cast<std::size_t>(cfg.batch_size) &&
            global % cfg.train_period == 0)
            train_step(online, target, buffer, opt, cfg, batch_rng);
        if (global % cfg.sync_period == 0) sync_target(online, target);
        if (global % cfg.qtrace_period == 0)
            qtrace.push_back({global, probe_mean_max_q(online, probe)});
    }
};

void accumulate_step(EpisodeLogRow& row, const env::StepResult& result, double reward_total,
                     double dt) {
    row.steps += 1;
    row.total_reward += reward_total;
    bool saw_target = false, saw_nontarget = false;
    for (const auto& event : result.events)
        (event.is_target ? saw_target : saw_nontarget) = true;
    if (saw_target)
        row.dwell_target_s += dt;
    else if (saw_nontarget)
        row.dwell_nontarget_s += dt;
    else
        row.dwell_empty_s += dt;
}

} // namespace

LoopResult run_loop(TrainEnv& environment, const nn::NetConfig& netcfg, const TrainConfig& cfg) {
    cfg.validate();
    TrainerCore core(netcfg, cfg);
    Rng ep_seeds = Rng(cfg.seed).derive("episode-seeds");
    std::int64_t episodes = 0;

    while (core.global < cfg.total_steps) {
        auto obs = environment.reset(ep_seeds.next_u64());
        episodes += 1;
        bool done = false;
        while (!done && core.global < cfg.total_steps) {
            const auto input = env::observation_input(obs);
            if (core.probe.size() < static_cast<std::size_t>(cfg.probe_size))
                core.probe.push_back(input);
            const double eps = epsilon_at(core.eps, core.global);
            const auto action = select_action(core.online, input, eps, core.act_rng);
            auto outcome = environment.step(action);
            core.buffer.push({obs, action, outcome.reward, outcome.obs, outcome.terminal});
            obs = std::move(outcome.obs);
            done = outcome.terminal || outcome.truncated;
            core.after_env_step(cfg);
        }
    }
    return {std::move(core.online), std::move(core.target), std::move(core.qtrace), core.global,
            episodes};
}

TrainResult run_training(const env::WorldConfig& world, const std::vector<Category>& labels,
                         const reward::SubjectProfile& subject,
                         const reward::RewardConfig& rewards, const nn::NetConfig& netcfg,
                         const TrainConfig& cfg) {
    world.validate();
    subject.validate();
    cfg.validate();
    const auto shapes = netcfg.shapes(); // also validates the chain
    if (netcfg.in_channels != 3 || shapes.h[0] != world.frame_size ||
        shapes.w[0] != world.frame_size)
        throw ConfigError("run_training: network input shape does not match the frame size");

    TrainerCore core(netcfg, cfg);

    // fixed held-out probe set from random rollouts on separate episode seeds
    {
        Rng probe_rng = Rng(cfg.seed).derive("probe-act");
        Rng probe_seeds = Rng(cfg.seed).derive("probe-seeds");
        for (int episode = 0; episode < 8 &&
                              core.probe.size() < static_cast<std::size_t>(cfg.probe_size);
             ++episode) {
            auto state = env::init_episode(world, labels, cfg.seed);
            state.rng = Rng(probe_seeds.next_u64()).derive("episode");
            std::int64_t steps = 0;
            while (!state.terminal && !state.truncated && steps < 2000) {
                const auto action =
                    static_cast<env::Action>(probe_rng.uniform_int(env::kNumActions));
                env::step(world, state, action);
                steps += 1;
                if (steps % 13 == 0) {
                    core.probe.push_back(env::observation_input(env::observe(state)));
                    if (core.probe.size() >= static_cast<std::size_t>(cfg.probe_size)) break;
                }
            }
        }
    }

    Rng ep_seeds = Rng(cfg.seed).derive("episode-seeds");
    std::vector<EpisodeLogRow> episodes;

    while (core.global < cfg.total_steps) {
        const std::uint64_t ep_seed = ep_seeds.next_u64();
        // same placement every episode; only the lead dynamics stream is fresh
        auto state = env::init_episode(world, labels, cfg.seed);
        state.rng = Rng(ep_seed).derive("episode");
        reward::Evaluator eval(subject, rewards, ep_seed);
        auto obs = env::observe(state);

        EpisodeLogRow row;
        row.episode = static_cast<std::int64_t>(episodes.size());

        while (!state.terminal && !state.truncated && core.global < cfg.total_steps) {
            const auto input = env::observation_input(obs);
            const double eps = epsilon_at(core.eps, core.global);
            const auto action = select_action(core.online, input, eps, core.act_rng);
            const auto result = env::step(world, state, action);
            const auto breakdown = eval.evaluate(world, state, result);
            auto next_obs = env::observe(state);
            core.buffer.push({std::move(obs), action, breakdown.total, next_obs, result.terminal});
            obs = std::move(next_obs);
            accumulate_step(row, result, breakdown.total, world.sim_dt);
            core.after_env_step(cfg);
        }

        row.run_time_s = state.elapsed;
        row.terminal_cause = state.terminal ? "gap" : state.truncated ? "road_end" : "budget";
        episodes.push_back(std::move(row));
    }

    return {std::move(core.online), std::move(episodes), std::move(core.qtrace)};
}

EpisodeLogRow evaluate_episode(const env::WorldConfig& world, const std::vector<Category>& labels,
                               const reward::SubjectProfile& subject,
                               const reward::RewardConfig& rewards, const nn::QNetwork& net,
                               std::uint64_t world_seed, std::uint64_t episode_seed) {
    world.validate();
    subject.validate();
    auto state = env::init_episode(world, labels, world_seed);
    state.rng = Rng(episode_seed).derive("episode");
    reward::Evaluator eval(subject, rewards, episode_seed);
    Rng dummy(0); // ε = 0 never consults the random branch's action draw

    EpisodeLogRow row;
    constexpr std::int64_t kHardCap = 1000000; // stalled-world safety stop
    while (!state.terminal && !state.truncated && row.steps < kHardCap) {
        const auto input = env::observation_input(env::observe(state));
        const auto action = select_action(net, input, 0.0, dummy);
        const auto result = env::step(world, state, action);
        const auto breakdown = eval.evaluate(world, state, result);
        accumulate_step(row, result, breakdown.total, world.sim_dt);
    }
    row.run_time_s = state.elapsed;
    row.terminal_cause = state.terminal ? "gap" : state.truncated ? "road_end" : "budget";
    return row;
}

std::string episode_log_to_csv(const std::vector<EpisodeLogRow>& rows) {
    std::ostringstream out;
    out << "episode,steps,run_time_s,total_reward,terminal_cause,dwell_target_s,"
           "dwell_nontarget_s,dwell_empty_s\n";
    for (const auto& row : rows)
        out << row.episode << ',' << row.steps << ',' << io::fmt(row.run_time_s) << ','
            << io::fmt(row.total_reward) << ',' << row.terminal_cause << ','
            << io::fmt(row.dwell_target_s) << ',' << io::fmt(row.dwell_nontarget_s) << ','
            << io::fmt(row.dwell_empty_s) << '\n';
    return out.str();
}

std::string qtrace_to_csv(const std::vector<QTracePoint>& points) {
    std::ostringstream out;
    out << "step,mean_max_q\n";
    for (const auto& point : points)
        out << point.step << ',' << io::fmt(point.mean_max_q) << '\n';
    return out.str();
}

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& csv,
                                                const std::string& expected_header,
                                                const char* what) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != expected_header)
        throw ConfigError(std::string(what) + ": unexpected header");
    const std::size_t fields = std::count(expected_header.begin(), expected_header.end(), ',') + 1;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> row;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) row.push_back(cell);
        if (row.size() != fields)
            throw ConfigError(std::string(what) + ": wrong field count in '" + line + "'");
        rows.push_back(std::move(row));
    }
    return rows;
}

double parse_double(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string(what) + ": bad number '" + s + "'");
    }
}

std::int64_t parse_int(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string(what) + ": bad integer '" + s + "'");
    }
}

} // namespace

std::vector<EpisodeLogRow> episode_log_from_csv(const std::string& csv) {
    const auto cells = parse_csv(csv,
                                 "episode,steps,run_time_s,total_reward,terminal_cause,"
                                 "dwell_target_s,dwell_nontarget_s,dwell_empty_s",
                                 "episode log");
    std::vector<EpisodeLogRow> rows;
    rows.reserve(cells.size());
    for (const auto& c : cells) {
        EpisodeLogRow row;
        row.episode = parse_int(c[0], "episode log");
        row.steps = parse_int(c[1], "episode log");
        row.run_time_s = parse_double(c[2], "episode log");
        row.total_reward = parse_double(c[3], "episode log");
        row.terminal_cause = c[4];
        row.dwell_target_s = parse_double(c[5], "episode log");
        row.dwell_nontarget_s = parse_double(c[6], "episode log");
        row.dwell_empty_s = parse_double(c[7], "episode log");
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<QTracePoint> qtrace_from_csv(const std::string& csv) {
    const auto cells = parse_csv(csv, "step,mean_max_q", "q trace");
    std::vector<QTracePoint> points;
    points.reserve(cells.size());
    for (const auto& c : cells)
        points.push_back({parse_int(c[0], "q trace"), parse_double(c[1], "q trace")});
    return points;
}

} // namespace prefdrive::dqn
