#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "mdmrl/errors.hpp"
#include "mdmrl/sampler.hpp"
#include "mdmrl/schedule_policy.hpp"

using namespace mdmrl;

namespace {

constexpr double kPi = 3.14159265358979323846;

DenoiserParams random_params(std::uint64_t seed) {
    DenoiserConfig cfg;
    RngState rng(seed);
    return DenoiserParams(cfg, rng);
}

// Fixed action schedule for tests.
class FixedSource : public ScheduleSource {
  public:
    explicit FixedSource(std::vector<ScheduleAction> actions) : actions_(std::move(actions)) {}
    ScheduleDecision decide(const ScheduleStepContext& ctx, RngState&) override {
        ScheduleDecision d;
        d.action = actions_.at(static_cast<std::size_t>(ctx.t));
        d.u = squash_inverse(d.action);
        return d;
    }
    bool stochastic() const override { return false; }

  private:
    std::vector<ScheduleAction> actions_;
};

} // namespace

TEST_CASE("sampling_step fills every masked position and keeps the rest") {
    DenoiserParams params = random_params(3);
    TokenSequence seq(16, 16);
    seq.tokens[0] = 4;
    seq.tokens[9] = 12;
    ScheduleAction action;
    action.cfg_scale = 2.0;
    RngState rng(77);
    auto res = sampling_step(params, seq, Condition::of(1), 0, 8, action, rng);
    CHECK(res.after.fully_committed());
    CHECK(res.after.tokens[0] == 4);
    CHECK(res.after.tokens[9] == 12);
    CHECK(res.filled.size() == 14);
    CHECK(res.confidence[0] == kCommittedConfidence);
    CHECK(res.confidence[9] == kCommittedConfidence);
    for (int pos : res.filled) {
        CHECK(std::isfinite(res.confidence[static_cast<std::size_t>(pos)]));
        CHECK(res.confidence[static_cast<std::size_t>(pos)] <= 0.0);
    }
}

TEST_CASE("sampling_step under zero parameters is uniform with -ln V confidence") {
    DenoiserConfig cfg;
    DenoiserParams zeros = DenoiserParams::zeros(cfg);
    TokenSequence seq(16, 16);
    ScheduleAction action;
    RngState rng(5);
    std::vector<int> counts(16, 0);
    const int trials = 2000;
    for (int i = 0; i < trials; ++i) {
        auto res = sampling_step(zeros, seq, Condition::of(0), 0, 4, action, rng);
        for (int pos : res.filled) {
            ++counts[static_cast<std::size_t>(res.after.tokens[static_cast<std::size_t>(pos)] - 1)];
            CHECK(res.confidence[static_cast<std::size_t>(pos)] ==
                  doctest::Approx(-std::log(16.0)).epsilon(1e-12));
        }
    }
    // 16 positions x 2000 trials, each token expected 2000 times
    for (int c : counts) CHECK(std::abs(c - 2000) < 300);
}

TEST_CASE("sampling_step greedy limit takes the argmax") {
    DenoiserParams params = random_params(11);
    TokenSequence seq(16, 16);
    ScheduleAction action;
    action.tau_sample = 1e-3; // at the floor: greedy
    action.cfg_scale = 1.0;
    RngState r1(1), r2(2);
    auto a = sampling_step(params, seq, Condition::of(2), 0, 4, action, r1);
    auto b = sampling_step(params, seq, Condition::of(2), 0, 4, action, r2);
    CHECK(a.after.tokens == b.after.tokens); // no rng dependence

    auto eval = denoiser_eval(params, seq, Condition::of(2), 0, 4);
    for (int pos : a.filled) {
        auto row_best = 0;
        for (int v = 1; v < 16; ++v) {
            if (eval.logits.at(static_cast<std::size_t>(pos), static_cast<std::size_t>(v)) >
                eval.logits.at(static_cast<std::size_t>(pos),
                               static_cast<std::size_t>(row_best))) {
                row_best = v;
            }
        }
        CHECK(a.after.tokens[static_cast<std::size_t>(pos)] == row_best + 1);
    }
}

TEST_CASE("remask_step honors the ratio, the sentinel and the bounds") {
    TokenSequence seq(8, 16);
    for (auto& t : seq.tokens) t = 3;
    std::vector<double> conf(8, -1.0);
    conf[0] = kCommittedConfidence; // previously committed

    ScheduleAction action;
    action.remask_ratio = 0.0;
    RngState rng(9);
    CHECK(remask_step(seq, conf, action, rng).tokens == seq.tokens);

    action.remask_ratio = 1.0; // ceil(1*8)=8 > 7 eligible -> truncate
    auto out = remask_step(seq, conf, action, rng);
    CHECK(out.tokens[0] == 3); // sentinel position never remasked
    CHECK(out.mask_count() == 7);

    action.remask_ratio = 1.5;
    CHECK_THROWS_AS(remask_step(seq, conf, action, rng), std::invalid_argument);
    action.remask_ratio = -0.1;
    CHECK_THROWS_AS(remask_step(seq, conf, action, rng), std::invalid_argument);
}

TEST_CASE("remask_step marginals are uniform for uniform confidences") {
    TokenSequence seq(8, 16);
    for (auto& t : seq.tokens) t = 2;
    std::vector<double> conf(8, -0.5);
    ScheduleAction action;
    action.remask_ratio = 0.5; // ceil(0.5*8) = 4 of 8
    RngState rng(123);
    const int trials = 10000;
    std::vector<int> remasked(8, 0);
    for (int i = 0; i < trials; ++i) {
        auto out = remask_step(seq, conf, action, rng);
        CHECK(out.mask_count() == 4);
        for (std::size_t p = 0; p < 8; ++p) {
            if (out.is_mask(p)) ++remasked[p];
        }
    }
    for (int count : remasked) {
        CHECK(static_cast<double>(count) / trials == doctest::Approx(0.5).epsilon(0.04));
    }
}

TEST_CASE("remask_step prefers low-confidence positions") {
    TokenSequence seq(4, 16);
    for (auto& t : seq.tokens) t = 1;
    std::vector<double> conf{-8.0, -0.1, -0.1, -0.1};
    ScheduleAction action;
    action.remask_ratio = 0.25; // one position
    action.tau_remask = 0.5;
    RngState rng(55);
    int low_hit = 0;
    const int trials = 4000;
    for (int i = 0; i < trials; ++i) {
        auto out = remask_step(seq, conf, action, rng);
        if (out.is_mask(0)) ++low_hit;
    }
    CHECK(low_hit > trials * 0.95);
}

TEST_CASE("degenerate one-step horizon commits everything") {
    DenoiserParams params = random_params(21);
    std::vector<ScheduleAction> actions(1);
    actions[0].remask_ratio = 0.9; // clamped to 0 at the terminal step
    FixedSource source(std::move(actions));
    RngState rng(2);
    Trajectory traj = generate_trajectory(params, source, Condition::of(0), 1, rng);
    CHECK(traj.steps.size() == 1);
    CHECK(traj.final_seq.fully_committed());
    CHECK(traj.steps[0].committed.size() == 16);
    CHECK(traj.steps[0].schedule.remask_ratio == 0.0);
}

TEST_CASE("mask-count law for the cosine preset across horizons") {
    DenoiserParams params = random_params(31);
    for (int T : {8, 16, 48}) {
        PresetScheduleSource source(preset_cosine(T));
        RngState rng(100 + static_cast<std::uint64_t>(T));
        Trajectory traj = generate_trajectory(params, source, Condition::of(1), T, rng);
        std::size_t masks = 16;
        for (int t = 0; t < T; ++t) {
            // independent evaluation of the closed-form remask curve
            double r = (t == T - 1) ? 0.0
                                    : std::cos(0.5 * kPi * static_cast<double>(t + 1) /
                                               static_cast<double>(T));
            auto want = std::min(static_cast<std::size_t>(std::ceil(r * 16.0)), masks);
            TokenSequence next = (t + 1 < T) ? traj.steps[static_cast<std::size_t>(t + 1)]
                                                   .state_before
                                             : traj.final_seq;
            CHECK(next.mask_count() == want);
            masks = want;
        }
        CHECK(traj.final_seq.fully_committed());
    }
}

TEST_CASE("mask-count law holds for arbitrary non-monotone schedules") {
    DenoiserParams params = random_params(37);
    const int T = 10;
    std::vector<ScheduleAction> actions(T);
    RngState arng(7);
    for (auto& a : actions) {
        a.remask_ratio = arng.next_double(); // possibly increasing
        a.tau_sample = 0.5 + arng.next_double();
        a.tau_remask = 0.5 + arng.next_double();
        a.cfg_scale = 3.0 * arng.next_double();
    }
    FixedSource source(actions);
    RngState rng(8);
    Trajectory traj = generate_trajectory(params, source, Condition::of(3), T, rng);
    std::size_t masks = 16;
    for (int t = 0; t < T; ++t) {
        double r = (t == T - 1) ? 0.0 : actions[static_cast<std::size_t>(t)].remask_ratio;
        auto want = std::min(static_cast<std::size_t>(std::ceil(r * 16.0)), masks);
        TokenSequence next = (t + 1 < T)
                                 ? traj.steps[static_cast<std::size_t>(t + 1)].state_before
                                 : traj.final_seq;
        CHECK(next.mask_count() == want);
        masks = want;
    }
    CHECK(traj.final_seq.fully_committed());
}

TEST_CASE("previously committed positions are never altered") {
    DenoiserParams params = random_params(41);
    PresetScheduleSource source(preset_cosine(16));
    RngState rng(11);
    Trajectory traj = generate_trajectory(params, source, Condition::of(5), 16, rng);
    for (std::size_t t = 0; t + 1 < traj.steps.size(); ++t) {
        const TokenSequence& before = traj.steps[t].state_before;
        const TokenSequence& after = traj.steps[t + 1].state_before;
        for (std::size_t p = 0; p < before.length(); ++p) {
            if (!before.is_mask(p)) CHECK(after.tokens[p] == before.tokens[p]);
        }
    }
}

TEST_CASE("identical seeds give bit-identical trajectories") {
    DenoiserParams params = random_params(43);
    PresetScheduleSource s1(preset_cosine(16));
    PresetScheduleSource s2(preset_cosine(16));
    RngState r1(555), r2(555);
    Trajectory a = generate_trajectory(params, s1, Condition::of(2), 16, r1);
    Trajectory b = generate_trajectory(params, s2, Condition::of(2), 16, r2);
    CHECK(trajectories_identical(a, b));
    CHECK(trajectory_to_json(a) == trajectory_to_json(b));

    RngState r3(556);
    Trajectory c = generate_trajectory(params, s1, Condition::of(2), 16, r3);
    CHECK_FALSE(trajectories_identical(a, c));
}

TEST_CASE("stored model log-probs replay exactly under unchanged parameters") {
    DenoiserParams params = random_params(47);
    PresetScheduleSource source(preset_cosine(12));
    RngState rng(99);
    Trajectory traj = generate_trajectory(params, source, Condition::of(4), 12, rng);
    bool saw_commit = false;
    for (int t = 0; t < 12; ++t) {
        const StepRecord& step = traj.steps[static_cast<std::size_t>(t)];
        if (step.committed.empty()) continue;
        saw_commit = true;
        auto lp = token_log_probs(params, step.state_before, traj.condition, t, 12,
                                  step.schedule, step.committed);
        double total = 0.0;
        for (double v : lp) total += v;
        CHECK(std::fabs(total - step.model_logprob_sum) <= 1e-12);
    }
    CHECK(saw_commit);
}

TEST_CASE("trajectory json carries the rollout record") {
    DenoiserParams params = random_params(53);
    PresetScheduleSource source(preset_cosine(4));
    RngState rng(3);
    Trajectory traj = generate_trajectory(params, source, Condition::of(1), 4, rng);
    traj.reward = 0.75;
    std::string j = trajectory_to_json(traj);
    CHECK(j.find("\"condition\":1") != std::string::npos);
    CHECK(j.find("\"reward\":0.75") != std::string::npos);
    CHECK(j.find("\"tau_s\"") != std::string::npos);
    CHECK(j.find("\"committed\"") != std::string::npos);
}
