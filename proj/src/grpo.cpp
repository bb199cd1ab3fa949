#include "mdmrl/grpo.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "mdmrl/errors.hpp"

namespace mdmrl {

std::vector<double> compute_advantages(const std::vector<double>& rewards) {
    if (rewards.size() < 2) {
        throw std::invalid_argument("compute_advantages: need at least 2 rewards");
    }
    double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    double std_dev = std::sqrt(var / n);
    std::vector<double> out(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        out[i] = (rewards[i] - mean) / (std_dev + 1e-8);
    }
    return out;
}

RolloutGroup collect_group(const DenoiserParams& theta, ScheduleSource& schedule,
                           Condition cond, int group_size, int horizon, const TaskSpec& task,
                           const RewardSpec& rewards, RngState& rng) {
    RolloutGroup group;
    group.condition = cond;
    for (int i = 0; i < group_size; ++i) {
        RngState traj_rng = rng.fork("traj");
        Trajectory traj = generate_trajectory(theta, schedule, cond, horizon, traj_rng);
        traj.reward = composite_reward(traj.final_seq, cond, task, rewards);
        group.rewards.push_back(traj.reward);
        group.trajectories.push_back(std::move(traj));
    }
    group.advantages = compute_advantages(group.rewards);
    return group;
}

double model_ratio(const DenoiserParams& theta, const Trajectory& traj, int t, int horizon) {
    const StepRecord& step = traj.steps.at(static_cast<std::size_t>(t));
    if (step.committed.empty()) {
        throw ContractViolation("model_ratio: step committed no tokens");
    }
    auto lp = token_log_probs(theta, step.state_before, traj.condition, t, horizon,
                              step.schedule, step.committed);
    double total = 0.0;
    for (double v : lp) total += v;
    return std::exp(total - step.model_logprob_sum);
}

double schedule_ratio(const SchedulePolicyParams& phi, const Trajectory& traj, int t,
                      int horizon) {
    const StepRecord& step = traj.steps.at(static_cast<std::size_t>(t));
    auto anchors = anchor_means(phi, horizon);
    auto mu = policy_mean(phi, step.pooled_features, anchors[static_cast<std::size_t>(t)], t,
                          horizon);
    double lp = action_log_prob(mu, phi.config.sigma, step.schedule_u);
    return std::exp(lp - step.schedule_logprob);
}

double clipped_surrogate(std::span<const double> ratios, std::span<const double> advantages,
                         double clip_epsilon) {
    if (ratios.size() != advantages.size()) {
        throw std::invalid_argument("clipped_surrogate: misaligned inputs");
    }
    if (ratios.empty()) throw std::invalid_argument("clipped_surrogate: empty inputs");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
        throw std::invalid_argument("clipped_surrogate: clip epsilon outside (0, 1)");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        double r = ratios[i];
        double a = advantages[i];
        double clipped = std::min(std::max(r, 1.0 - clip_epsilon), 1.0 + clip_epsilon);
        total += std::min(r * a, clipped * a);
    }
    return -total / static_cast<double>(ratios.size());
}

double kl_categorical(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_categorical: size mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

double kl_regularizer(const DenoiserParams& theta, const DenoiserParams& theta_ref,
                      const Trajectory& traj, int t, int horizon) {
    const StepRecord& step = traj.steps.at(static_cast<std::size_t>(t));
    if (step.committed.empty()) return 0.0;
    Tape tape(false);
    auto leaves = make_denoiser_leaves(tape, theta);
    auto ref_leaves = make_denoiser_leaves(tape, theta_ref);
    auto dist = sampling_distribution(tape, leaves, theta.config, step.state_before,
                                      traj.condition, t, horizon, step.schedule);
    auto ref = sampling_distribution(tape, ref_leaves, theta_ref.config, step.state_before,
                                     traj.condition, t, horizon, step.schedule);
    const Tensor& ls = tape.value(dist.log_probs);
    const Tensor& ls_ref = tape.value(ref.log_probs);
    auto V = static_cast<std::size_t>(theta.config.vocab_size);
    double total = 0.0;
    for (auto [pos, tok] : step.committed) {
        (void)tok;
        double kl = 0.0;
        for (std::size_t v = 0; v < V; ++v) {
            double lp = ls.at(static_cast<std::size_t>(pos), v);
            kl += std::exp(lp) * (lp - ls_ref.at(static_cast<std::size_t>(pos), v));
        }
        total += kl;
    }
    return total / static_cast<double>(step.committed.size());
}

void TrainConfig::validate() const {
    auto bad = [](const std::string& msg) { throw std::invalid_argument("TrainConfig: " + msg); };
    if (horizon < 1) bad("horizon must be >= 1");
    if (group_size_model < 2 || group_size_schedule < 2) bad("group sizes must be >= 2");
    if (groups_per_update < 1) bad("groups_per_update must be >= 1");
    if (updates < 1) bad("updates must be >= 1");
    if (cycles < 1) bad("cycles must be >= 1");
    if (model_updates_per_cycle < 1) bad("model updates per cycle must be >= 1");
    if (schedule_updates_per_cycle < 1) bad("schedule updates per cycle must be >= 1");
    if (epochs_per_rollout < 1) bad("epochs_per_rollout must be >= 1");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) bad("clip epsilon outside (0, 1)");
    if (kl_beta < 0.0) bad("kl beta must be >= 0");
    if (sigma < 0.0) bad("sigma must be >= 0");
    if (!(lr_model > 0.0 && lr_schedule > 0.0)) bad("learning rates must be positive");
}

namespace {

enum class RatioMode { Model, Schedule, Joint };

const char* phase_name(RatioMode m) {
    switch (m) {
        case RatioMode::Model: return "model";
        case RatioMode::Schedule: return "schedule";
        default: return "joint";
    }
}

struct UpdateContext {
    const TrainConfig* cfg = nullptr;
    const DenoiserParams* theta_ref = nullptr; // set when kl_beta > 0
    bool schedule_stochastic = false;
    std::vector<std::array<double, 4>> anchors; // schedule anchor per step
};

double grad_norm_of(const ParamStore& store) {
    double sq = 0.0;
    for (std::size_t i = 0; i < store.count(); ++i) {
        for (double v : store.entry(i).grad.data) sq += v * v;
    }
    return sq;
}

// One gradient update over a batch of rollout groups. Each (trajectory,
// step) term runs on its own small tape; gradients accumulate into the
// parameter stores and a single Adam step follows.
UpdateStats run_update(RatioMode mode, DenoiserParams& theta, SchedulePolicyParams* phi,
                       const std::vector<RolloutGroup>& batch, const UpdateContext& ctx) {
    const TrainConfig& cfg = *ctx.cfg;
    bool needs_theta = (mode != RatioMode::Schedule);
    bool needs_phi = (mode != RatioMode::Model) && ctx.schedule_stochastic;
    if (mode == RatioMode::Schedule && !ctx.schedule_stochastic) {
        throw ContractViolation("schedule updates require a stochastic schedule source");
    }

    theta.store.zero_grads();
    if (phi) phi->store.zero_grads();

    double loss_total = 0.0;
    double reward_total = 0.0;
    double ratio_total = 0.0;
    std::size_t terms = 0;
    std::size_t clipped_terms = 0;
    std::size_t reward_count = 0;

    auto T = static_cast<std::size_t>(cfg.horizon);
    double weight = 1.0 / (static_cast<double>(batch.size()) * T);

    Tape tape(true);
    for (const RolloutGroup& group : batch) {
        double gweight = weight / static_cast<double>(group.trajectories.size());
        for (std::size_t gi = 0; gi < group.trajectories.size(); ++gi) {
            const Trajectory& traj = group.trajectories[gi];
            double advantage = group.advantages[gi];
            reward_total += group.rewards[gi];
            ++reward_count;
            for (std::size_t t = 0; t < T; ++t) {
                const StepRecord& step = traj.steps[t];
                tape.clear();

                DenoiserLeaves dl;
                PolicyLeaves pl;
                NodeId ratio = 0;
                bool theta_on_tape = false;
                bool constant_ratio = true;

                if (needs_theta && !step.committed.empty()) {
                    dl = make_denoiser_leaves(tape, theta);
                    theta_on_tape = true;
                }
                SamplingDistNodes dist{};
                if (needs_theta) {
                    if (theta_on_tape) {
                        dist = sampling_distribution(tape, dl, theta.config,
                                                     step.state_before, traj.condition,
                                                     static_cast<int>(t), cfg.horizon,
                                                     step.schedule);
                        auto lp = token_log_probs_from_dist(tape, dist, step.state_before,
                                                            theta.config.vocab_size,
                                                            step.committed);
                        ratio = tape.exp(tape.add_scalar(lp.sum, -step.model_logprob_sum));
                        constant_ratio = false;
                    } else {
                        // empty fill set: the step's token product is empty,
                        // its ratio is identically 1
                        ratio = tape.scalar(1.0);
                    }
                }
                if (needs_phi) {
                    pl = make_policy_leaves(tape, *phi);
                    NodeId mu = policy_mean_node(tape, pl, phi->config, step.pooled_features,
                                                 ctx.anchors[t], static_cast<int>(t),
                                                 cfg.horizon);
                    NodeId lp = action_log_prob_node(tape, mu, phi->config.sigma,
                                                     step.schedule_u);
                    NodeId sratio = tape.exp(tape.add_scalar(lp, -step.schedule_logprob));
                    ratio = (mode == RatioMode::Joint && needs_theta)
                                ? tape.mul(ratio, sratio)
                                : sratio;
                    constant_ratio = false;
                }

                NodeId scaled = tape.scale(ratio, advantage);
                NodeId clipped = tape.scale(
                    tape.clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon),
                    advantage);
                NodeId term = tape.minimum(scaled, clipped);
                NodeId loss = tape.scale(term, -gweight);

                if (cfg.kl_beta > 0.0 && theta_on_tape) {
                    auto ref_leaves = make_denoiser_leaves(tape, *ctx.theta_ref);
                    auto ref_dist = sampling_distribution(
                        tape, ref_leaves, ctx.theta_ref->config, step.state_before,
                        traj.condition, static_cast<int>(t), cfg.horizon, step.schedule);
                    std::vector<int> positions;
                    for (auto [pos, tok] : step.committed) {
                        (void)tok;
                        positions.push_back(pos);
                    }
                    NodeId rows = tape.select_rows(dist.log_probs, positions);
                    NodeId ref_rows = tape.select_rows(ref_dist.log_probs, positions);
                    NodeId kl_sum = tape.sum(tape.mul(tape.exp(rows), tape.sub(rows, ref_rows)));
                    NodeId kl_mean =
                        tape.scale(kl_sum, 1.0 / static_cast<double>(positions.size()));
                    loss = tape.add(loss, tape.scale(kl_mean, cfg.kl_beta * gweight));
                }

                double ratio_value = tape.value_scalar(ratio);
                ratio_total += ratio_value;
                ++terms;
                if (ratio_value < 1.0 - cfg.clip_epsilon ||
                    ratio_value > 1.0 + cfg.clip_epsilon) {
                    ++clipped_terms;
                }
                loss_total += tape.value_scalar(loss);

                if (!constant_ratio) {
                    tape.backward(loss);
                    if (theta_on_tape) accumulate_denoiser_grads(tape, dl, theta);
                    if (needs_phi) accumulate_policy_grads(tape, pl, *phi);
                }
            }
        }
    }

    double grad_sq = 0.0;
    if (needs_theta) grad_sq += grad_norm_of(theta.store);
    if (needs_phi) grad_sq += grad_norm_of(phi->store);

    if (needs_theta) {
        AdamConfig a = cfg.adam;
        a.lr = cfg.lr_model;
        theta.store.adam_step(a);
    }
    if (needs_phi) {
        AdamConfig a = cfg.adam;
        a.lr = cfg.lr_schedule;
        phi->store.adam_step(a);
    }

    UpdateStats stats;
    stats.phase = phase_name(mode);
    stats.mean_reward = reward_total / static_cast<double>(reward_count);
    stats.loss = loss_total;
    stats.mean_ratio = ratio_total / static_cast<double>(terms);
    stats.clip_fraction = static_cast<double>(clipped_terms) / static_cast<double>(terms);
    stats.grad_norm = std::sqrt(grad_sq);
    return stats;
}

std::vector<RolloutGroup> collect_batch(const DenoiserParams& theta, ScheduleSource& source,
                                        int group_size, const TrainConfig& cfg,
                                        const TaskSpec& task, const RewardSpec& rewards,
                                        RngState& rng, TrainResult& accounting) {
    std::vector<RolloutGroup> batch;
    for (int b = 0; b < cfg.groups_per_update; ++b) {
        auto cond = Condition::of(static_cast<int>(
            rng.next_below(static_cast<std::uint64_t>(task.train_conditions))));
        RngState group_rng = rng.fork("group");
        batch.push_back(collect_group(theta, source, cond, group_size, cfg.horizon, task,
                                      rewards, group_rng));
        accounting.env_trajectories += static_cast<std::uint64_t>(group_size);
        accounting.env_steps +=
            static_cast<std::uint64_t>(group_size) * static_cast<std::uint64_t>(cfg.horizon);
    }
    return batch;
}

} // namespace

TrainResult naive_train(const TrainConfig& cfg, DenoiserParams& theta,
                        const PresetSchedule& preset, const TaskSpec& task,
                        const RewardSpec& rewards, RngState& rng, const UpdateHook& hook) {
    cfg.validate();
    if (preset.horizon != cfg.horizon) {
        throw std::invalid_argument("naive_train: preset horizon mismatch");
    }
    TrainResult result;
    PresetScheduleSource source(preset);
    UpdateContext ctx;
    ctx.cfg = &cfg;
    DenoiserParams theta_ref = theta; // pre-update reference for the KL term
    ctx.theta_ref = &theta_ref;
    int update_index = 0;
    for (int u = 0; u < cfg.updates; ++u) {
        auto batch = collect_batch(theta, source, cfg.group_size_model, cfg, task, rewards,
                                   rng, result);
        for (int e = 0; e < cfg.epochs_per_rollout; ++e) {
            UpdateStats stats = run_update(RatioMode::Model, theta, nullptr, batch, ctx);
            stats.update = ++update_index;
            if (hook) hook(stats, theta, nullptr);
            result.history.push_back(std::move(stats));
        }
    }
    return result;
}

TrainResult alternating_train(const TrainConfig& cfg, DenoiserParams& theta,
                              SchedulePolicyParams& phi, const TaskSpec& task,
                              const RewardSpec& rewards, RngState& rng,
                              const UpdateHook& hook) {
    cfg.validate();
    if (!(cfg.sigma > 0.0)) {
        throw std::invalid_argument("alternating_train: sigma must be positive");
    }
    if (phi.config.sigma != cfg.sigma) {
        throw std::invalid_argument("alternating_train: policy sigma differs from config");
    }
    if (phi.config.horizon != cfg.horizon) {
        throw std::invalid_argument("alternating_train: policy horizon differs from config");
    }
    TrainResult result;
    LearnedScheduleSource source(phi, cfg.horizon, cfg.sigma);
    UpdateContext ctx;
    ctx.cfg = &cfg;
    ctx.schedule_stochastic = true;
    ctx.anchors = anchor_means(phi, cfg.horizon);
    DenoiserParams theta_ref = theta;
    ctx.theta_ref = &theta_ref;
    int update_index = 0;
    for (int cycle = 0; cycle < cfg.cycles; ++cycle) {
        for (int u = 0; u < cfg.model_updates_per_cycle; ++u) {
            auto batch = collect_batch(theta, source, cfg.group_size_model, cfg, task,
                                       rewards, rng, result);
            for (int e = 0; e < cfg.epochs_per_rollout; ++e) {
                UpdateStats stats = run_update(RatioMode::Model, theta, &phi, batch, ctx);
                stats.update = ++update_index;
                if (hook) hook(stats, theta, &phi);
                result.history.push_back(std::move(stats));
            }
        }
        for (int u = 0; u < cfg.schedule_updates_per_cycle; ++u) {
            auto batch = collect_batch(theta, source, cfg.group_size_schedule, cfg, task,
                                       rewards, rng, result);
            for (int e = 0; e < cfg.epochs_per_rollout; ++e) {
                UpdateStats stats = run_update(RatioMode::Schedule, theta, &phi, batch, ctx);
                stats.update = ++update_index;
                if (hook) hook(stats, theta, &phi);
                result.history.push_back(std::move(stats));
            }
        }
    }
    return result;
}

TrainResult joint_train(const TrainConfig& cfg, DenoiserParams& theta,
                        SchedulePolicyParams& phi, const TaskSpec& task,
                        const RewardSpec& rewards, RngState& rng, const UpdateHook& hook) {
    cfg.validate();
    if (!(cfg.sigma > 0.0)) {
        throw std::invalid_argument("joint_train: sigma must be positive");
    }
    if (phi.config.sigma != cfg.sigma) {
        throw std::invalid_argument("joint_train: policy sigma differs from config");
    }
    if (phi.config.horizon != cfg.horizon) {
        throw std::invalid_argument("joint_train: policy horizon differs from config");
    }
    TrainResult result;
    LearnedScheduleSource source(phi, cfg.horizon, cfg.sigma);
    UpdateContext ctx;
    ctx.cfg = &cfg;
    ctx.schedule_stochastic = true;
    ctx.anchors = anchor_means(phi, cfg.horizon);
    DenoiserParams theta_ref = theta;
    ctx.theta_ref = &theta_ref;
    int update_index = 0;
    for (int u = 0; u < cfg.updates; ++u) {
        auto batch = collect_batch(theta, source, cfg.group_size_model, cfg, task, rewards,
                                   rng, result);
        for (int e = 0; e < cfg.epochs_per_rollout; ++e) {
            UpdateStats stats = run_update(RatioMode::Joint, theta, &phi, batch, ctx);
            stats.update = ++update_index;
            if (hook) hook(stats, theta, &phi);
            result.history.push_back(std::move(stats));
        }
    }
    return result;
}

TrainResult joint_train_preset(const TrainConfig& cfg, DenoiserParams& theta,
                               SchedulePolicyParams& phi, const PresetSchedule& preset,
                               const TaskSpec& task, const RewardSpec& rewards, RngState& rng,
                               const UpdateHook& hook) {
    cfg.validate();
    if (preset.horizon != cfg.horizon) {
        throw std::invalid_argument("joint_train_preset: preset horizon mismatch");
    }
    TrainResult result;
    PresetScheduleSource source(preset);
    UpdateContext ctx;
    ctx.cfg = &cfg;
    ctx.schedule_stochastic = false; // fixed schedule: its ratio factor is 1
    DenoiserParams theta_ref = theta;
    ctx.theta_ref = &theta_ref;
    int update_index = 0;
    for (int u = 0; u < cfg.updates; ++u) {
        auto batch = collect_batch(theta, source, cfg.group_size_model, cfg, task, rewards,
                                   rng, result);
        for (int e = 0; e < cfg.epochs_per_rollout; ++e) {
            UpdateStats stats = run_update(RatioMode::Joint, theta, &phi, batch, ctx);
            stats.update = ++update_index;
            if (hook) hook(stats, theta, &phi);
            result.history.push_back(std::move(stats));
        }
    }
    return result;
}

} // namespace mdmrl
