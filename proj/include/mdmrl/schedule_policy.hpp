#pragma once

#include <array>
#include <string>
#include <vector>

#include "mdmrl/params.hpp"
#include "mdmrl/rng.hpp"
#include "mdmrl/sampler.hpp"
#include "mdmrl/schedule_action.hpp"
#include "mdmrl/tape.hpp"

namespace mdmrl {

/// Closed-form per-step schedule. "cosine" is the standard hand-designed
/// decoding schedule (cosine remask decay, unit sampling temperature,
/// linearly annealed remask temperature, guidance 9); the gamma variant
/// exponentiates the remask curve.
struct PresetSchedule {
    std::string name;
    int horizon = 1;
    double gamma = 1.0;

    ScheduleAction action(int t) const;
};

PresetSchedule preset_cosine(int horizon);
PresetSchedule preset_cosine_gamma(int horizon, double gamma);
/// Parse a config token: "table1" | "cosine" | "cosine_gamma:<gamma>".
PresetSchedule make_preset(const std::string& token, int horizon);

/// Bounded action coordinates from unconstrained ones:
/// r = sigmoid(u0), tau_s = eps + softplus(u1), tau_r = eps + softplus(u2),
/// s = softplus(u3), with eps = 1e-3.
ScheduleAction squash(const std::array<double, 4>& u);
std::array<double, 4> squash_inverse(const ScheduleAction& a);

struct ActionSample {
    std::array<double, 4> u;
    ScheduleAction action;
};

/// u ~ N(mean, sigma^2 I) and its squashed action. sigma may be 0
/// (degenerate: u = mean, no draws consumed).
ActionSample sample_action(const std::array<double, 4>& mean, double sigma, RngState& rng);

/// Log-density of the unconstrained draw. The likelihood is defined over u,
/// not the squashed action; ratios of this density at rollout and update
/// time are exact without the squash Jacobian. sigma must be positive.
double action_log_prob(const std::array<double, 4>& mean, double sigma,
                       const std::array<double, 4>& u);
NodeId action_log_prob_node(Tape& tape, NodeId mean, double sigma,
                            const std::array<double, 4>& u);

/// Linear interpolation of per-step unconstrained means over normalized
/// time, mapping a horizon of means.size() onto T_test steps. Endpoints are
/// preserved; terminal masking stays enforced by the sampler's final-step
/// clamp.
std::vector<std::array<double, 4>> interpolate_schedule(
    const std::vector<std::array<double, 4>>& means, int T_test);

struct SchedulePolicyConfig {
    int feature_dim = 64; // denoiser hidden width
    int hidden_dim = 16;
    int time_bins = 16;
    int time_dim = 8;
    double sigma = 0.1;
    int horizon = 48;              // grid the anchor schedule is defined on
    std::string baseline = "table1";
};

/// The trainable scheduling head: a small perceptron over pooled denoiser
/// features plus a time embedding, emitting a residual on the baseline
/// schedule's unconstrained coordinates. The output layer starts at zero,
/// so a fresh policy reproduces the baseline at every step.
class SchedulePolicyParams {
  public:
    SchedulePolicyParams(const SchedulePolicyConfig& cfg, RngState& init_rng);

    /// squash_inverse of the baseline preset on the anchor grid.
    std::vector<std::array<double, 4>> baseline_means() const;

    SchedulePolicyConfig config;
    ParamStore store;
};

struct PolicyLeaves {
    NodeId w1 = 0, b1 = 0, w2 = 0, b2 = 0, time_embed = 0;
    std::vector<NodeId> all;
};

PolicyLeaves make_policy_leaves(Tape& tape, const SchedulePolicyParams& params);
void accumulate_policy_grads(const Tape& tape, const PolicyLeaves& leaves,
                             SchedulePolicyParams& params, double scale = 1.0);

/// Unconstrained mean: anchor + perceptron(pooled features, time embedding).
NodeId policy_mean_node(Tape& tape, const PolicyLeaves& leaves,
                        const SchedulePolicyConfig& cfg, const std::vector<double>& pooled,
                        const std::array<double, 4>& anchor, int t, int horizon);

std::array<double, 4> policy_mean(const SchedulePolicyParams& params,
                                  const std::vector<double>& pooled,
                                  const std::array<double, 4>& anchor, int t, int horizon);

/// Anchor means for an arbitrary horizon: the baseline grid, passed through
/// interpolate_schedule when the horizon differs from the training grid.
std::vector<std::array<double, 4>> anchor_means(const SchedulePolicyParams& params,
                                                int horizon);

/// Fixed-function schedule provider.
class PresetScheduleSource : public ScheduleSource {
  public:
    explicit PresetScheduleSource(PresetSchedule preset) : preset_(std::move(preset)) {}
    ScheduleDecision decide(const ScheduleStepContext& ctx, RngState& rng) override;
    bool stochastic() const override { return false; }
    const PresetSchedule& preset() const { return preset_; }

  private:
    PresetSchedule preset_;
};

/// Learned schedule provider. With pin_to_baseline the emitted actions are
/// the baseline preset's exactly (the policy machinery still runs and the
/// recorded u is the policy mean); combined with sigma = 0 this makes the
/// learned-policy path coincide with the fixed-schedule sampler.
class LearnedScheduleSource : public ScheduleSource {
  public:
    LearnedScheduleSource(const SchedulePolicyParams& params, int horizon, double sigma,
                          bool pin_to_baseline = false);
    ScheduleDecision decide(const ScheduleStepContext& ctx, RngState& rng) override;
    bool stochastic() const override { return sigma_ > 0.0 && !pinned_; }
    const std::vector<std::array<double, 4>>& anchors() const { return anchors_; }
    bool interpolated() const { return interpolated_; }

  private:
    const SchedulePolicyParams* params_;
    PresetSchedule baseline_;
    std::vector<std::array<double, 4>> anchors_;
    int horizon_;
    double sigma_;
    bool pinned_;
    bool interpolated_;
};

} // namespace mdmrl
