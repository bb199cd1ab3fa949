#pragma once

#include <utility>
#include <vector>

#include "mdmrl/params.hpp"
#include "mdmrl/rng.hpp"
#include "mdmrl/schedule_action.hpp"
#include "mdmrl/sequence.hpp"
#include "mdmrl/tape.hpp"

namespace mdmrl {

struct DenoiserConfig {
    int vocab_size = 16;
    int length = 16;
    int num_conditions = 8;
    int hidden_dim = 64;
    int layers = 2;
    int time_bins = 16;
};

/// The trainable bidirectional token network: per-position embeddings plus
/// stacked mixing layers where cross-position information flows through a
/// pooled context vector, which keeps the map permutation-equivariant.
class DenoiserParams {
  public:
    DenoiserParams(const DenoiserConfig& cfg, RngState& init_rng);
    explicit DenoiserParams(const DenoiserConfig& cfg); // zero-initialized
    static DenoiserParams zeros(const DenoiserConfig& cfg);

    DenoiserConfig config;
    ParamStore store;
};

/// Leaf node ids for one tape, aligned with the store's entry order.
struct DenoiserLeaves {
    NodeId token_embed = 0, pos_embed = 0, cond_embed = 0, time_embed = 0;
    struct Layer {
        NodeId w_mix, w_ctx, b_mix, w_out, b_out;
    };
    std::vector<Layer> layers;
    NodeId out_proj = 0, out_bias = 0;
    std::vector<NodeId> all; // entry order
};

DenoiserLeaves make_denoiser_leaves(Tape& tape, const DenoiserParams& params);

/// Normalized progress t/(horizon-1) in [0,1] (0 when horizon is 1).
double step_progress(int t, int horizon);

/// Add tape gradients of every leaf into the store's gradient arrays,
/// scaled by `scale`.
void accumulate_denoiser_grads(const Tape& tape, const DenoiserLeaves& leaves,
                               DenoiserParams& params, double scale = 1.0);

struct DenoiserNodes {
    NodeId logits;   // [N, V]
    NodeId features; // [N, D], final mixing-layer output
};

/// Forward pass for one (sequence, condition, step) triple. `horizon` is the
/// total step count of the surrounding run; timestep conditioning uses the
/// normalized progress t/(horizon-1) so runs of different lengths share one
/// embedding scale.
DenoiserNodes denoiser_forward(Tape& tape, const DenoiserLeaves& leaves,
                               const DenoiserConfig& cfg, const TokenSequence& seq,
                               Condition cond, int t, int horizon);

struct DenoiserEval {
    Tensor logits;
    Tensor features;
};

/// Value-only forward (no gradients).
DenoiserEval denoiser_eval(const DenoiserParams& params, const TokenSequence& seq,
                           Condition cond, int t, int horizon);

/// Guided logits: uncond + s * (cond - uncond).
Tensor apply_cfg(const Tensor& cond_logits, const Tensor& uncond_logits, double s);
NodeId apply_cfg(Tape& tape, NodeId cond_logits, NodeId uncond_logits, double s);

/// Conditional + unconditional passes over one state. The features come
/// from the conditional pass and do not depend on the schedule action.
struct ForwardPairNodes {
    NodeId cond_logits;
    NodeId uncond_logits;
    NodeId features;
};
ForwardPairNodes denoiser_forward_pair(Tape& tape, const DenoiserLeaves& leaves,
                                       const DenoiserConfig& cfg, const TokenSequence& seq,
                                       Condition cond, int t, int horizon);

/// Per-position log-probabilities of the guided sampling distribution
/// softmax(cfg(cond, uncond, s) / tau_s).
NodeId guided_log_probs(Tape& tape, const ForwardPairNodes& pair,
                        const ScheduleAction& action);

/// Both of the above in one call. Shared by the sampler and by likelihood
/// recomputation so rollout and replay see bit-identical numbers.
struct SamplingDistNodes {
    NodeId log_probs; // [N, V]
    NodeId features;  // [N, D]
};
SamplingDistNodes sampling_distribution(Tape& tape, const DenoiserLeaves& leaves,
                                        const DenoiserConfig& cfg, const TokenSequence& seq,
                                        Condition cond, int t, int horizon,
                                        const ScheduleAction& action);

/// Log-probability of each committed (position, token) under the step's
/// sampling distribution, plus their sum. Committed positions must have been
/// masked in seq_before.
struct TokenLogProbNodes {
    NodeId per_token; // [K]
    NodeId sum;       // scalar
};
TokenLogProbNodes token_log_probs_node(Tape& tape, const DenoiserLeaves& leaves,
                                       const DenoiserConfig& cfg,
                                       const TokenSequence& seq_before, Condition cond, int t,
                                       int horizon, const ScheduleAction& action,
                                       const std::vector<std::pair<int, int>>& committed);

/// Same selection over an already-built distribution.
TokenLogProbNodes token_log_probs_from_dist(Tape& tape, const SamplingDistNodes& dist,
                                            const TokenSequence& seq_before, int vocab_size,
                                            const std::vector<std::pair<int, int>>& committed);

std::vector<double> token_log_probs(const DenoiserParams& params,
                                    const TokenSequence& seq_before, Condition cond, int t,
                                    int horizon, const ScheduleAction& action,
                                    const std::vector<std::pair<int, int>>& committed);

struct PretrainOptions {
    double mask_rate_min = 0.15;
    double mask_rate_max = 1.0;
    double cond_dropout = 0.1;
};

using PretrainBatch = std::vector<std::pair<TokenSequence, Condition>>;

/// Mean negative log-likelihood of the true tokens at masked positions.
/// Masking is resampled per example until at least one position is masked.
NodeId masked_pretrain_loss(Tape& tape, const DenoiserLeaves& leaves,
                            const DenoiserConfig& cfg, const PretrainBatch& batch,
                            const PretrainOptions& opts, RngState& rng);

double masked_pretrain_loss_value(const DenoiserParams& params, const PretrainBatch& batch,
                                  const PretrainOptions& opts, RngState& rng);

} // namespace mdmrl
