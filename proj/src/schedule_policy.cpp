#include "mdmrl/schedule_policy.hpp"

#include <cmath>
#include <stdexcept>

#include "mdmrl/denoiser.hpp"
#include "mdmrl/errors.hpp"
#include "mdmrl/tensor.hpp"

namespace mdmrl {

namespace {

constexpr double kSquashEps = 1e-3;
constexpr double kPi = 3.14159265358979323846;

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
    if (!(y > 0.0)) throw std::invalid_argument("softplus_inverse: argument must be positive");
    if (y > 30.0) return y;
    return std::log(std::expm1(y));
}

double logit(double p) {
    p = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return std::log(p / (1.0 - p));
}

} // namespace

ScheduleAction PresetSchedule::action(int t) const {
    if (t < 0 || t >= horizon) {
        throw std::invalid_argument("PresetSchedule: step index out of range");
    }
    double frac = static_cast<double>(t + 1) / static_cast<double>(horizon);
    double r = std::cos(0.5 * kPi * frac);
    if (gamma != 1.0) r = std::pow(r, gamma);
    // cos(pi/2) only reaches zero up to round-off; the terminal step must
    // leave nothing masked
    if (t == horizon - 1) r = 0.0;
    ScheduleAction a;
    a.remask_ratio = r;
    a.tau_sample = 1.0;
    a.tau_remask = 2.0 * static_cast<double>(horizon - t) / static_cast<double>(horizon);
    a.cfg_scale = 9.0;
    return a;
}

PresetSchedule preset_cosine(int horizon) {
    if (horizon < 1) throw std::invalid_argument("preset_cosine: horizon must be >= 1");
    return PresetSchedule{"table1", horizon, 1.0};
}

PresetSchedule preset_cosine_gamma(int horizon, double gamma) {
    if (horizon < 1) throw std::invalid_argument("preset_cosine_gamma: horizon must be >= 1");
    if (!(gamma > 0.0)) throw std::invalid_argument("preset_cosine_gamma: gamma must be > 0");
    return PresetSchedule{"cosine_gamma:" + std::to_string(gamma), horizon, gamma};
}

PresetSchedule make_preset(const std::string& token, int horizon) {
    if (token == "table1" || token == "cosine") return preset_cosine(horizon);
    const std::string prefix = "cosine_gamma:";
    if (token.rfind(prefix, 0) == 0) {
        double gamma;
        try {
            gamma = std::stod(token.substr(prefix.size()));
        } catch (const std::exception&) {
            throw ConfigError("schedule preset: bad gamma in '" + token + "'");
        }
        return preset_cosine_gamma(horizon, gamma);
    }
    throw ConfigError("schedule preset: unknown name '" + token + "'");
}

ScheduleAction squash(const std::array<double, 4>& u) {
    ScheduleAction a;
    a.remask_ratio = sigmoid(u[0]);
    a.tau_sample = kSquashEps + softplus(u[1]);
    a.tau_remask = kSquashEps + softplus(u[2]);
    a.cfg_scale = softplus(u[3]);
    return a;
}

std::array<double, 4> squash_inverse(const ScheduleAction& a) {
    auto inv_temp = [](double tau) {
        return softplus_inverse(std::max(tau - kSquashEps, 1e-12));
    };
    return {logit(a.remask_ratio), inv_temp(a.tau_sample), inv_temp(a.tau_remask),
            softplus_inverse(std::max(a.cfg_scale, 1e-12))};
}

ActionSample sample_action(const std::array<double, 4>& mean, double sigma, RngState& rng) {
    if (sigma < 0.0) throw std::invalid_argument("sample_action: sigma must be >= 0");
    ActionSample s;
    s.u = mean;
    if (sigma > 0.0) {
        for (double& v : s.u) v += sigma * rng.next_gaussian();
    }
    s.action = squash(s.u);
    return s;
}

NodeId action_log_prob_node(Tape& tape, NodeId mean, double sigma,
                            const std::array<double, 4>& u) {
    if (!(sigma > 0.0)) {
        throw ContractViolation("action_log_prob: sigma must be positive for likelihoods");
    }
    constexpr double two_pi = 6.283185307179586476925286766559;
    NodeId uc = tape.constant(Tensor::vector({u[0], u[1], u[2], u[3]}));
    NodeId d = tape.sub(uc, mean);
    NodeId sq = tape.sum(tape.mul(d, d));
    double norm = -0.5 * 4.0 * std::log(two_pi * sigma * sigma);
    return tape.add_scalar(tape.scale(sq, -1.0 / (2.0 * sigma * sigma)), norm);
}

double action_log_prob(const std::array<double, 4>& mean, double sigma,
                       const std::array<double, 4>& u) {
    Tape tape(false);
    NodeId m = tape.constant(Tensor::vector({mean[0], mean[1], mean[2], mean[3]}));
    return tape.value_scalar(action_log_prob_node(tape, m, sigma, u));
}

std::vector<std::array<double, 4>> interpolate_schedule(
    const std::vector<std::array<double, 4>>& means, int T_test) {
    if (means.size() < 2) {
        throw std::invalid_argument("interpolate_schedule: need at least 2 source steps");
    }
    if (T_test < 1) throw std::invalid_argument("interpolate_schedule: T_test must be >= 1");
    std::size_t last = means.size() - 1;
    std::vector<std::array<double, 4>> out(static_cast<std::size_t>(T_test));
    for (int t = 0; t < T_test; ++t) {
        double x01 = step_progress(t, T_test);
        double x = x01 * static_cast<double>(last);
        auto i0 = static_cast<std::size_t>(x);
        if (i0 > last) i0 = last;
        std::size_t i1 = std::min(i0 + 1, last);
        double f = x - static_cast<double>(i0);
        if (i0 == i1 || f == 0.0) {
            out[static_cast<std::size_t>(t)] = means[i0];
            continue;
        }
        for (int k = 0; k < 4; ++k) {
            out[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
                (1.0 - f) * means[i0][static_cast<std::size_t>(k)] +
                f * means[i1][static_cast<std::size_t>(k)];
        }
    }
    return out;
}

SchedulePolicyParams::SchedulePolicyParams(const SchedulePolicyConfig& cfg, RngState& init_rng)
    : config(cfg) {
    auto F = static_cast<std::size_t>(cfg.feature_dim);
    auto H = static_cast<std::size_t>(cfg.hidden_dim);
    auto K = static_cast<std::size_t>(cfg.time_bins);
    auto Td = static_cast<std::size_t>(cfg.time_dim);
    double ws = 1.0 / std::sqrt(static_cast<double>(F + Td));
    Tensor w1({F + Td, H});
    for (double& v : w1.data) v = ws * init_rng.next_gaussian();
    Tensor te({K, Td});
    for (double& v : te.data) v = 0.1 * init_rng.next_gaussian();
    store.add("w1", std::move(w1));
    store.add("b1", Tensor({H}));
    store.add("w2", Tensor({H, 4})); // zero: fresh policy sits on the baseline
    store.add("b2", Tensor({4}));
    store.add("time_embed", std::move(te));
}

std::vector<std::array<double, 4>> SchedulePolicyParams::baseline_means() const {
    PresetSchedule preset = make_preset(config.baseline, config.horizon);
    std::vector<std::array<double, 4>> out(static_cast<std::size_t>(config.horizon));
    for (int t = 0; t < config.horizon; ++t) {
        out[static_cast<std::size_t>(t)] = squash_inverse(preset.action(t));
    }
    return out;
}

PolicyLeaves make_policy_leaves(Tape& tape, const SchedulePolicyParams& params) {
    PolicyLeaves lv;
    for (std::size_t i = 0; i < params.store.count(); ++i) {
        lv.all.push_back(tape.leaf(params.store.entry(i).value));
    }
    lv.w1 = lv.all[0];
    lv.b1 = lv.all[1];
    lv.w2 = lv.all[2];
    lv.b2 = lv.all[3];
    lv.time_embed = lv.all[4];
    return lv;
}

void accumulate_policy_grads(const Tape& tape, const PolicyLeaves& leaves,
                             SchedulePolicyParams& params, double scale) {
    for (std::size_t i = 0; i < leaves.all.size(); ++i) {
        const Tensor& g = tape.grad(leaves.all[i]);
        Tensor& acc = params.store.entry(i).grad;
        for (std::size_t j = 0; j < acc.numel(); ++j) acc.data[j] += scale * g.data[j];
    }
}

NodeId policy_mean_node(Tape& tape, const PolicyLeaves& leaves,
                        const SchedulePolicyConfig& cfg, const std::vector<double>& pooled,
                        const std::array<double, 4>& anchor, int t, int horizon) {
    if (static_cast<int>(pooled.size()) != cfg.feature_dim) {
        throw std::invalid_argument("policy_mean: pooled feature size mismatch");
    }
    NodeId feat = tape.concat(tape.constant(Tensor::vector(pooled)),
                              tape.interp_row(leaves.time_embed, step_progress(t, horizon)));
    NodeId h = tape.tanh(tape.add(tape.vecmat(feat, leaves.w1), leaves.b1));
    NodeId delta = tape.add(tape.vecmat(h, leaves.w2), leaves.b2);
    NodeId base = tape.constant(Tensor::vector({anchor[0], anchor[1], anchor[2], anchor[3]}));
    return tape.add(base, delta);
}

std::array<double, 4> policy_mean(const SchedulePolicyParams& params,
                                  const std::vector<double>& pooled,
                                  const std::array<double, 4>& anchor, int t, int horizon) {
    Tape tape(false);
    auto leaves = make_policy_leaves(tape, params);
    NodeId mu = policy_mean_node(tape, leaves, params.config, pooled, anchor, t, horizon);
    const Tensor& v = tape.value(mu);
    return {v.data[0], v.data[1], v.data[2], v.data[3]};
}

std::vector<std::array<double, 4>> anchor_means(const SchedulePolicyParams& params,
                                                int horizon) {
    auto base = params.baseline_means();
    if (horizon == params.config.horizon) return base;
    return interpolate_schedule(base, horizon);
}

ScheduleDecision PresetScheduleSource::decide(const ScheduleStepContext& ctx, RngState&) {
    ScheduleDecision d;
    d.action = preset_.action(ctx.t);
    d.u = squash_inverse(d.action);
    d.logprob = 0.0;
    return d;
}

LearnedScheduleSource::LearnedScheduleSource(const SchedulePolicyParams& params, int horizon,
                                             double sigma, bool pin_to_baseline)
    : params_(&params),
      baseline_(make_preset(params.config.baseline, horizon)),
      anchors_(anchor_means(params, horizon)),
      horizon_(horizon),
      sigma_(sigma),
      pinned_(pin_to_baseline),
      interpolated_(horizon != params.config.horizon) {
    if (sigma < 0.0) throw std::invalid_argument("LearnedScheduleSource: sigma must be >= 0");
    if (pinned_ && sigma_ > 0.0) {
        throw std::invalid_argument("LearnedScheduleSource: pinning requires sigma = 0");
    }
}

ScheduleDecision LearnedScheduleSource::decide(const ScheduleStepContext& ctx, RngState& rng) {
    if (ctx.horizon != horizon_) {
        throw ContractViolation("LearnedScheduleSource: horizon mismatch");
    }
    if (ctx.pooled_features == nullptr) {
        throw ContractViolation("LearnedScheduleSource: pooled features required");
    }
    std::array<double, 4> mu =
        policy_mean(*params_, *ctx.pooled_features,
                    anchors_[static_cast<std::size_t>(ctx.t)], ctx.t, horizon_);
    ScheduleDecision d;
    if (pinned_) {
        d.action = baseline_.action(ctx.t);
        d.u = mu;
        d.logprob = 0.0;
        return d;
    }
    ActionSample s = sample_action(mu, sigma_, rng);
    d.action = s.action;
    d.u = s.u;
    d.logprob = sigma_ > 0.0 ? action_log_prob(mu, sigma_, s.u) : 0.0;
    return d;
}

} // namespace mdmrl
