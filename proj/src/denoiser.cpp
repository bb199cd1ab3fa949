#include "mdmrl/denoiser.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mdmrl/errors.hpp"

namespace mdmrl {

namespace {

Tensor gaussian_tensor(std::vector<std::size_t> shape, double stddev, RngState& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = stddev * rng.next_gaussian();
    return t;
}

void add_denoiser_entries(ParamStore& store, const DenoiserConfig& cfg, RngState* rng) {
    auto N = static_cast<std::size_t>(cfg.length);
    auto V = static_cast<std::size_t>(cfg.vocab_size);
    auto D = static_cast<std::size_t>(cfg.hidden_dim);
    auto C = static_cast<std::size_t>(cfg.num_conditions);
    auto K = static_cast<std::size_t>(cfg.time_bins);
    double ws = 1.0 / std::sqrt(static_cast<double>(D));
    auto init = [&](std::vector<std::size_t> shape, double stddev) {
        return rng ? gaussian_tensor(std::move(shape), stddev, *rng) : Tensor(std::move(shape));
    };
    store.add("token_embed", init({V + 1, D}, 0.1)); // row 0 = mask
    store.add("pos_embed", init({N, D}, 0.1));
    store.add("cond_embed", init({C + 1, D}, 0.1)); // last row = unconditional
    store.add("time_embed", init({K, D}, 0.1));
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        store.add(p + "w_mix", init({D, D}, ws));
        store.add(p + "w_ctx", init({D, D}, ws));
        store.add(p + "b_mix", Tensor({D}));
        store.add(p + "w_out", init({D, D}, ws));
        store.add(p + "b_out", Tensor({D}));
    }
    store.add("out_proj", init({D, V}, 0.1));
    store.add("out_bias", Tensor({V}));
}

} // namespace

DenoiserParams::DenoiserParams(const DenoiserConfig& cfg, RngState& init_rng) : config(cfg) {
    add_denoiser_entries(store, cfg, &init_rng);
}

DenoiserParams DenoiserParams::zeros(const DenoiserConfig& cfg) {
    DenoiserParams p{cfg};
    return p;
}

DenoiserParams::DenoiserParams(const DenoiserConfig& cfg) : config(cfg) {
    add_denoiser_entries(store, cfg, nullptr);
}

DenoiserLeaves make_denoiser_leaves(Tape& tape, const DenoiserParams& params) {
    DenoiserLeaves lv;
    for (std::size_t i = 0; i < params.store.count(); ++i) {
        lv.all.push_back(tape.leaf(params.store.entry(i).value));
    }
    std::size_t k = 0;
    lv.token_embed = lv.all[k++];
    lv.pos_embed = lv.all[k++];
    lv.cond_embed = lv.all[k++];
    lv.time_embed = lv.all[k++];
    for (int l = 0; l < params.config.layers; ++l) {
        DenoiserLeaves::Layer layer;
        layer.w_mix = lv.all[k++];
        layer.w_ctx = lv.all[k++];
        layer.b_mix = lv.all[k++];
        layer.w_out = lv.all[k++];
        layer.b_out = lv.all[k++];
        lv.layers.push_back(layer);
    }
    lv.out_proj = lv.all[k++];
    lv.out_bias = lv.all[k++];
    return lv;
}

void accumulate_denoiser_grads(const Tape& tape, const DenoiserLeaves& leaves,
                               DenoiserParams& params, double scale) {
    for (std::size_t i = 0; i < leaves.all.size(); ++i) {
        const Tensor& g = tape.grad(leaves.all[i]);
        Tensor& acc = params.store.entry(i).grad;
        for (std::size_t j = 0; j < acc.numel(); ++j) acc.data[j] += scale * g.data[j];
    }
}

// Normalized progress shared by every time-conditioned table lookup, so
// runs with different step counts index the same embedding scale.
double step_progress(int t, int horizon) {
    if (t < 0 || t >= horizon) {
        throw std::invalid_argument("step_progress: step index out of range");
    }
    return horizon <= 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(horizon - 1);
}


DenoiserNodes denoiser_forward(Tape& tape, const DenoiserLeaves& leaves,
                               const DenoiserConfig& cfg, const TokenSequence& seq,
                               Condition cond, int t, int horizon) {
    if (static_cast<int>(seq.length()) != cfg.length) {
        throw std::invalid_argument("denoiser_forward: sequence length mismatch");
    }
    seq.validate();
    if (seq.vocab_size != cfg.vocab_size) {
        throw std::invalid_argument("denoiser_forward: vocab size mismatch");
    }
    if (!cond.is_null() && cond.class_id >= cfg.num_conditions) {
        throw std::invalid_argument("denoiser_forward: condition out of range");
    }
    auto N = static_cast<std::size_t>(cfg.length);

    // x = token + position + condition + timestep embeddings
    NodeId x = tape.add(tape.embed_rows(leaves.token_embed, seq.tokens),
                        tape.embed_rows(leaves.pos_embed, [&] {
                            std::vector<int> iota(N);
                            for (std::size_t i = 0; i < N; ++i) iota[i] = static_cast<int>(i);
                            return iota;
                        }()));
    std::size_t cond_row = cond.is_null() ? static_cast<std::size_t>(cfg.num_conditions)
                                          : static_cast<std::size_t>(cond.class_id);
    x = tape.add(x, tape.broadcast_row(tape.embed_row(leaves.cond_embed, cond_row), N));
    x = tape.add(x, tape.broadcast_row(
                        tape.interp_row(leaves.time_embed, step_progress(t, horizon)), N));

    for (const auto& layer : leaves.layers) {
        NodeId ctx = tape.mean_rows(x);
        NodeId mixed = tape.add(tape.matmul(x, layer.w_mix),
                                tape.broadcast_row(tape.vecmat(ctx, layer.w_ctx), N));
        NodeId h = tape.tanh(tape.add_rowvec(mixed, layer.b_mix));
        x = tape.add(x, tape.add_rowvec(tape.matmul(h, layer.w_out), layer.b_out));
    }

    DenoiserNodes out;
    out.features = x;
    out.logits = tape.add_rowvec(tape.matmul(x, leaves.out_proj), leaves.out_bias);
    return out;
}

DenoiserEval denoiser_eval(const DenoiserParams& params, const TokenSequence& seq,
                           Condition cond, int t, int horizon) {
    Tape tape(false);
    auto leaves = make_denoiser_leaves(tape, params);
    auto nodes = denoiser_forward(tape, leaves, params.config, seq, cond, t, horizon);
    return {tape.value(nodes.logits), tape.value(nodes.features)};
}

Tensor apply_cfg(const Tensor& cond_logits, const Tensor& uncond_logits, double s) {
    if (!cond_logits.same_shape(uncond_logits)) {
        throw std::invalid_argument("apply_cfg: shape mismatch");
    }
    Tensor out = uncond_logits;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out.data[i] += s * (cond_logits.data[i] - uncond_logits.data[i]);
    }
    return out;
}

NodeId apply_cfg(Tape& tape, NodeId cond_logits, NodeId uncond_logits, double s) {
    return tape.add(uncond_logits, tape.scale(tape.sub(cond_logits, uncond_logits), s));
}

ForwardPairNodes denoiser_forward_pair(Tape& tape, const DenoiserLeaves& leaves,
                                       const DenoiserConfig& cfg, const TokenSequence& seq,
                                       Condition cond, int t, int horizon) {
    auto cond_pass = denoiser_forward(tape, leaves, cfg, seq, cond, t, horizon);
    auto uncond_pass = denoiser_forward(tape, leaves, cfg, seq, Condition::null(), t, horizon);
    return {cond_pass.logits, uncond_pass.logits, cond_pass.features};
}

NodeId guided_log_probs(Tape& tape, const ForwardPairNodes& pair,
                        const ScheduleAction& action) {
    NodeId guided = apply_cfg(tape, pair.cond_logits, pair.uncond_logits, action.cfg_scale);
    return tape.log_softmax_rows(guided, effective_temperature(action.tau_sample));
}

SamplingDistNodes sampling_distribution(Tape& tape, const DenoiserLeaves& leaves,
                                        const DenoiserConfig& cfg, const TokenSequence& seq,
                                        Condition cond, int t, int horizon,
                                        const ScheduleAction& action) {
    auto pair = denoiser_forward_pair(tape, leaves, cfg, seq, cond, t, horizon);
    SamplingDistNodes out;
    out.log_probs = guided_log_probs(tape, pair, action);
    out.features = pair.features;
    return out;
}

TokenLogProbNodes token_log_probs_from_dist(Tape& tape, const SamplingDistNodes& dist,
                                            const TokenSequence& seq_before, int vocab_size,
                                            const std::vector<std::pair<int, int>>& committed) {
    std::vector<std::pair<int, int>> entries;
    entries.reserve(committed.size());
    for (auto [pos, tok] : committed) {
        if (pos < 0 || static_cast<std::size_t>(pos) >= seq_before.length()) {
            throw ContractViolation("token_log_probs: position out of range");
        }
        if (!seq_before.is_mask(static_cast<std::size_t>(pos))) {
            throw ContractViolation("token_log_probs: committed position was not masked");
        }
        if (tok < 1 || tok > vocab_size) {
            throw ContractViolation("token_log_probs: committed token out of range");
        }
        entries.emplace_back(pos, tok - 1);
    }
    TokenLogProbNodes out;
    out.per_token = tape.select_entries(dist.log_probs, entries);
    out.sum = tape.sum(out.per_token);
    return out;
}

TokenLogProbNodes token_log_probs_node(Tape& tape, const DenoiserLeaves& leaves,
                                       const DenoiserConfig& cfg,
                                       const TokenSequence& seq_before, Condition cond, int t,
                                       int horizon, const ScheduleAction& action,
                                       const std::vector<std::pair<int, int>>& committed) {
    auto dist = sampling_distribution(tape, leaves, cfg, seq_before, cond, t, horizon, action);
    return token_log_probs_from_dist(tape, dist, seq_before, cfg.vocab_size, committed);
}

std::vector<double> token_log_probs(const DenoiserParams& params,
                                    const TokenSequence& seq_before, Condition cond, int t,
                                    int horizon, const ScheduleAction& action,
                                    const std::vector<std::pair<int, int>>& committed) {
    Tape tape(false);
    auto leaves = make_denoiser_leaves(tape, params);
    auto nodes = token_log_probs_node(tape, leaves, params.config, seq_before, cond, t,
                                      horizon, action, committed);
    return tape.value(nodes.per_token).data;
}

NodeId masked_pretrain_loss(Tape& tape, const DenoiserLeaves& leaves,
                            const DenoiserConfig& cfg, const PretrainBatch& batch,
                            const PretrainOptions& opts, RngState& rng) {
    if (batch.empty()) throw std::invalid_argument("masked_pretrain_loss: empty batch");
    if (!(opts.mask_rate_min > 0.0 && opts.mask_rate_max <= 1.0 &&
          opts.mask_rate_min <= opts.mask_rate_max)) {
        throw std::invalid_argument("masked_pretrain_loss: invalid mask-rate range");
    }
    NodeId nll_sum = tape.scalar(0.0);
    std::size_t total_masked = 0;
    for (const auto& [full, cond] : batch) {
        double rate = opts.mask_rate_min +
                      (opts.mask_rate_max - opts.mask_rate_min) * rng.next_double();
        TokenSequence masked = full;
        std::vector<std::pair<int, int>> targets; // (position, vocab column)
        while (targets.empty()) {
            masked = full;
            for (std::size_t i = 0; i < full.length(); ++i) {
                if (rng.next_double() < rate) {
                    masked.tokens[i] = kMaskToken;
                    targets.emplace_back(static_cast<int>(i), full.tokens[i] - 1);
                }
            }
        }
        Condition used = (rng.next_double() < opts.cond_dropout) ? Condition::null() : cond;
        auto fwd = denoiser_forward(tape, leaves, cfg, masked, used, 0, 1);
        NodeId ls = tape.log_softmax_rows(fwd.logits, 1.0);
        nll_sum = tape.add(nll_sum, tape.sum(tape.select_entries(ls, targets)));
        total_masked += targets.size();
    }
    return tape.scale(nll_sum, -1.0 / static_cast<double>(total_masked));
}

double masked_pretrain_loss_value(const DenoiserParams& params, const PretrainBatch& batch,
                                  const PretrainOptions& opts, RngState& rng) {
    Tape tape(false);
    auto leaves = make_denoiser_leaves(tape, params);
    NodeId loss = masked_pretrain_loss(tape, leaves, params.config, batch, opts, rng);
    return tape.value_scalar(loss);
}

} // namespace mdmrl
