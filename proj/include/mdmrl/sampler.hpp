#pragma once

#include <array>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mdmrl/denoiser.hpp"
#include "mdmrl/rng.hpp"
#include "mdmrl/schedule_action.hpp"
#include "mdmrl/sequence.hpp"

namespace mdmrl {

/// Confidence assigned to positions committed before the current step;
/// such positions are never altered again.
inline constexpr double kCommittedConfidence = std::numeric_limits<double>::infinity();

/// One generation step as recorded for later likelihood evaluation.
struct StepRecord {
    TokenSequence state_before;
    ScheduleAction schedule;                   // as executed (terminal clamp included)
    std::vector<std::pair<int, int>> committed; // (position, token), ascending positions
    double model_logprob_sum = 0.0;
    std::array<double, 4> schedule_u{}; // unconstrained schedule coordinates
    double schedule_logprob = 0.0;      // 0 when the source is deterministic
    std::vector<double> pooled_features; // policy state snapshot at rollout time
};

struct Trajectory {
    Condition condition;
    std::vector<StepRecord> steps;
    TokenSequence final_seq;
    double reward = 0.0;
};

/// Exact (bitwise) equality over every recorded field.
bool trajectories_identical(const Trajectory& a, const Trajectory& b);

std::string trajectory_to_json(const Trajectory& t);

/// A per-step provider of schedule actions: either a closed-form preset or
/// the learned policy. decide() receives a forked stream so deterministic
/// and stochastic sources leave the caller's stream identical.
struct ScheduleStepContext {
    int t = 0;
    int horizon = 1;
    const std::vector<double>* pooled_features = nullptr;
};

struct ScheduleDecision {
    ScheduleAction action;
    std::array<double, 4> u{};
    double logprob = 0.0;
};

class ScheduleSource {
  public:
    virtual ~ScheduleSource() = default;
    virtual ScheduleDecision decide(const ScheduleStepContext& ctx, RngState& rng) = 0;
    /// True when decide() draws from a proper density (usable likelihood).
    virtual bool stochastic() const = 0;
};

struct SamplingStepResult {
    TokenSequence after;            // every masked position filled
    std::vector<double> confidence; // +inf at previously committed positions
    std::vector<int> filled;        // positions sampled this step, ascending
};

/// Fill every masked position with a draw from the guided distribution at
/// the action's sampling temperature (argmax at or below the temperature
/// floor) and score each new token with its own log-probability.
SamplingStepResult sampling_step(const DenoiserParams& params, const TokenSequence& seq,
                                 Condition cond, int t, int horizon,
                                 const ScheduleAction& action, RngState& rng);

/// Return ceil(r*N) positions (truncated to the eligible count) to MASK,
/// drawn without replacement with probability proportional to
/// softmax(-confidence / tau_remask) over this step's newly filled
/// positions. Positions with +inf confidence are never selected.
TokenSequence remask_step(const TokenSequence& seq_after_sampling,
                          const std::vector<double>& confidence,
                          const ScheduleAction& action, RngState& rng);

/// Run the full generation loop from an all-masked sequence, recording every
/// step. The final step always executes with remask ratio 0 so the terminal
/// sequence is fully committed.
Trajectory generate_trajectory(const DenoiserParams& params, ScheduleSource& schedule,
                               Condition cond, int horizon, RngState& rng);

} // namespace mdmrl
