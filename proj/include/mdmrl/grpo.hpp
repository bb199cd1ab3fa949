#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mdmrl/denoiser.hpp"
#include "mdmrl/params.hpp"
#include "mdmrl/sampler.hpp"
#include "mdmrl/schedule_policy.hpp"
#include "mdmrl/tasks.hpp"

namespace mdmrl {

/// G rollouts sharing one condition, with group-normalized advantages.
struct RolloutGroup {
    Condition condition;
    std::vector<Trajectory> trajectories;
    std::vector<double> rewards;
    std::vector<double> advantages;
};

/// (R - mean) / (population std + 1e-8). Needs at least two rewards.
std::vector<double> compute_advantages(const std::vector<double>& rewards);

RolloutGroup collect_group(const DenoiserParams& theta, ScheduleSource& schedule,
                           Condition cond, int group_size, int horizon, const TaskSpec& task,
                           const RewardSpec& rewards, RngState& rng);

/// Probability ratio of the committed tokens of one recorded step under the
/// current model against the stored rollout values, with the schedule held
/// at its rollout action.
double model_ratio(const DenoiserParams& theta, const Trajectory& traj, int t, int horizon);

/// Probability ratio of the stored unconstrained schedule draw under the
/// current policy mean against the stored rollout density.
double schedule_ratio(const SchedulePolicyParams& phi, const Trajectory& traj, int t,
                      int horizon);

/// -(1/n) sum min(r*A, clip(r, 1-eps, 1+eps)*A) over aligned arrays.
double clipped_surrogate(std::span<const double> ratios, std::span<const double> advantages,
                         double clip_epsilon);

/// Exact KL(p || q) between categorical distributions.
double kl_categorical(std::span<const double> p, std::span<const double> q);

/// Mean full-vocabulary KL between the current and reference model's
/// sampling distributions at one step's committed positions.
double kl_regularizer(const DenoiserParams& theta, const DenoiserParams& theta_ref,
                      const Trajectory& traj, int t, int horizon);

struct TrainConfig {
    int horizon = 48;                    // T
    int group_size_model = 6;            // G during model-phase rollouts
    int group_size_schedule = 8;         // G during schedule-phase rollouts
    int groups_per_update = 2;
    int updates = 136;                   // rollout batches (naive and joint modes)
    int cycles = 3;
    int model_updates_per_cycle = 24;    // N_m
    int schedule_updates_per_cycle = 16; // N_s
    int epochs_per_rollout = 1;
    double clip_epsilon = 0.2;
    double kl_beta = 0.0;
    double sigma = 0.1;
    double lr_model = 1e-3;
    double lr_schedule = 1e-2;
    AdamConfig adam; // betas and eps; lr comes from the phase

    void validate() const;
};

struct UpdateStats {
    int update = 0;
    std::string phase;
    double mean_reward = 0.0;
    double loss = 0.0;
    double mean_ratio = 0.0;
    double clip_fraction = 0.0;
    double grad_norm = 0.0;
};

/// Called after every gradient update; phi is null in naive mode.
using UpdateHook =
    std::function<void(const UpdateStats&, const DenoiserParams&, const SchedulePolicyParams*)>;

struct TrainResult {
    std::vector<UpdateStats> history;
    std::uint64_t env_trajectories = 0;
    std::uint64_t env_steps = 0;
};

/// Model-only optimization under a fixed preset schedule.
TrainResult naive_train(const TrainConfig& cfg, DenoiserParams& theta,
                        const PresetSchedule& preset, const TaskSpec& task,
                        const RewardSpec& rewards, RngState& rng, const UpdateHook& hook = {});

/// Phase-alternating co-optimization: N_m model updates with the schedule
/// frozen, then N_s schedule updates with the model frozen, per cycle.
TrainResult alternating_train(const TrainConfig& cfg, DenoiserParams& theta,
                              SchedulePolicyParams& phi, const TaskSpec& task,
                              const RewardSpec& rewards, RngState& rng,
                              const UpdateHook& hook = {});

/// Product-ratio co-optimization stepping both parameter sets every update.
TrainResult joint_train(const TrainConfig& cfg, DenoiserParams& theta,
                        SchedulePolicyParams& phi, const TaskSpec& task,
                        const RewardSpec& rewards, RngState& rng, const UpdateHook& hook = {});

/// Same as joint_train but rolling out under a fixed preset: the schedule
/// factor degenerates to 1 and the run coincides with naive_train.
TrainResult joint_train_preset(const TrainConfig& cfg, DenoiserParams& theta,
                               SchedulePolicyParams& phi, const PresetSchedule& preset,
                               const TaskSpec& task, const RewardSpec& rewards, RngState& rng,
                               const UpdateHook& hook = {});

} // namespace mdmrl
