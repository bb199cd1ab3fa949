#include "mdmrl/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mdmrl/errors.hpp"

namespace mdmrl {

namespace {

using json = nlohmann::ordered_json;

// Fill every masked position from the rows of a [N, V] log-probability
// matrix. One categorical draw per masked position, ascending; greedy
// temperatures take the argmax and consume no draws.
SamplingStepResult sample_masked_positions(const Tensor& log_probs, const TokenSequence& seq,
                                           double tau_sample, RngState& rng) {
    std::size_t N = seq.length();
    auto V = static_cast<std::size_t>(seq.vocab_size);
    SamplingStepResult out;
    out.after = seq;
    out.confidence.assign(N, kCommittedConfidence);
    bool greedy = tau_sample <= kTemperatureFloor;
    std::vector<double> weights(V);
    for (std::size_t i = 0; i < N; ++i) {
        if (!seq.is_mask(i)) continue;
        const double* row = log_probs.data.data() + i * V;
        std::size_t pick = 0;
        if (greedy) {
            for (std::size_t v = 1; v < V; ++v) {
                if (row[v] > row[pick]) pick = v;
            }
        } else {
            for (std::size_t v = 0; v < V; ++v) weights[v] = std::exp(row[v]);
            pick = rng.next_categorical(weights);
        }
        out.after.tokens[i] = static_cast<int>(pick) + 1;
        out.confidence[i] = row[pick];
        out.filled.push_back(static_cast<int>(i));
    }
    return out;
}

} // namespace

SamplingStepResult sampling_step(const DenoiserParams& params, const TokenSequence& seq,
                                 Condition cond, int t, int horizon,
                                 const ScheduleAction& action, RngState& rng) {
    Tape tape(false);
    auto leaves = make_denoiser_leaves(tape, params);
    auto dist =
        sampling_distribution(tape, leaves, params.config, seq, cond, t, horizon, action);
    return sample_masked_positions(tape.value(dist.log_probs), seq, action.tau_sample, rng);
}

TokenSequence remask_step(const TokenSequence& seq_after_sampling,
                          const std::vector<double>& confidence,
                          const ScheduleAction& action, RngState& rng) {
    if (!(action.remask_ratio >= 0.0 && action.remask_ratio <= 1.0)) {
        throw std::invalid_argument("remask_step: remask ratio outside [0, 1]");
    }
    if (confidence.size() != seq_after_sampling.length()) {
        throw std::invalid_argument("remask_step: confidence length mismatch");
    }
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < confidence.size(); ++i) {
        if (std::isfinite(confidence[i])) eligible.push_back(i);
    }
    auto want = static_cast<std::size_t>(
        std::ceil(action.remask_ratio * static_cast<double>(seq_after_sampling.length())));
    std::size_t k = std::min(want, eligible.size());
    TokenSequence out = seq_after_sampling;
    if (k == 0) return out;

    // Selection weights: softmax of negated confidence over the eligible
    // set only, so the +inf sentinel never reaches exp().
    std::vector<double> neg(eligible.size());
    double tau = effective_temperature(action.tau_remask);
    for (std::size_t j = 0; j < eligible.size(); ++j) neg[j] = -confidence[eligible[j]];
    std::vector<double> weights = softmax(std::span<const double>(neg), tau);

    // Draw without replacement via renormalized categorical draws.
    for (std::size_t drawn = 0; drawn < k; ++drawn) {
        std::size_t j = rng.next_categorical(weights);
        out.tokens[eligible[j]] = kMaskToken;
        weights[j] = 0.0;
    }
    return out;
}

Trajectory generate_trajectory(const DenoiserParams& params, ScheduleSource& schedule,
                               Condition cond, int horizon, RngState& rng) {
    if (horizon < 1) throw std::invalid_argument("generate_trajectory: horizon must be >= 1");
    const DenoiserConfig& cfg = params.config;
    Trajectory traj;
    traj.condition = cond;
    TokenSequence seq(static_cast<std::size_t>(cfg.length), cfg.vocab_size);

    Tape tape(false);
    for (int t = 0; t < horizon; ++t) {
        // Forked stream per step: deterministic and stochastic sources leave
        // the token stream identically positioned.
        RngState sched_rng = rng.fork("sched");

        tape.clear();
        auto leaves = make_denoiser_leaves(tape, params);
        auto pair = denoiser_forward_pair(tape, leaves, cfg, seq, cond, t, horizon);
        std::vector<double> pooled = tape.value(tape.mean_rows(pair.features)).data;

        ScheduleStepContext ctx{t, horizon, &pooled};
        ScheduleDecision dec = schedule.decide(ctx, sched_rng);
        ScheduleAction action = dec.action;
        if (t == horizon - 1) action.remask_ratio = 0.0; // terminal clamp

        NodeId ls = guided_log_probs(tape, pair, action);
        SamplingStepResult sampled =
            sample_masked_positions(tape.value(ls), seq, action.tau_sample, rng);
        TokenSequence next = remask_step(sampled.after, sampled.confidence, action, rng);

        StepRecord rec;
        rec.state_before = seq;
        rec.schedule = action;
        rec.schedule_u = dec.u;
        rec.schedule_logprob = dec.logprob;
        rec.pooled_features = std::move(pooled);
        const Tensor& lsv = tape.value(ls);
        for (int pos : sampled.filled) {
            if (next.is_mask(static_cast<std::size_t>(pos))) continue;
            int tok = next.tokens[static_cast<std::size_t>(pos)];
            rec.committed.emplace_back(pos, tok);
            rec.model_logprob_sum +=
                lsv.at(static_cast<std::size_t>(pos), static_cast<std::size_t>(tok - 1));
        }
        traj.steps.push_back(std::move(rec));
        seq = std::move(next);
    }
    traj.final_seq = std::move(seq);
    return traj;
}

bool trajectories_identical(const Trajectory& a, const Trajectory& b) {
    if (!(a.condition == b.condition) || a.reward != b.reward ||
        !(a.final_seq == b.final_seq) || a.steps.size() != b.steps.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        const StepRecord& x = a.steps[i];
        const StepRecord& y = b.steps[i];
        if (!(x.state_before == y.state_before) || !(x.schedule == y.schedule) ||
            x.committed != y.committed || x.model_logprob_sum != y.model_logprob_sum ||
            x.schedule_u != y.schedule_u || x.schedule_logprob != y.schedule_logprob ||
            x.pooled_features != y.pooled_features) {
            return false;
        }
    }
    return true;
}

std::string trajectory_to_json(const Trajectory& t) {
    json j;
    j["condition"] = t.condition.class_id;
    j["reward"] = t.reward;
    j["final"] = t.final_seq.tokens;
    json steps = json::array();
    for (const StepRecord& s : t.steps) {
        json rec;
        rec["schedule"] = {{"r", s.schedule.remask_ratio},
                           {"tau_s", s.schedule.tau_sample},
                           {"tau_r", s.schedule.tau_remask},
                           {"s", s.schedule.cfg_scale}};
        rec["u"] = s.schedule_u;
        json committed = json::array();
        for (auto [pos, tok] : s.committed) committed.push_back({pos, tok});
        rec["committed"] = std::move(committed);
        rec["model_logprob"] = s.model_logprob_sum;
        rec["schedule_logprob"] = s.schedule_logprob;
        steps.push_back(std::move(rec));
    }
    j["steps"] = std::move(steps);
    return j.dump();
}

} // namespace mdmrl
