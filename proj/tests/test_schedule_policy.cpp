#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "mdmrl/errors.hpp"
#include "mdmrl/sampler.hpp"
#include "mdmrl/schedule_policy.hpp"

using namespace mdmrl;

namespace {

constexpr double kPi = 3.14159265358979323846;

SchedulePolicyConfig small_policy_config(int horizon = 8) {
    SchedulePolicyConfig cfg;
    cfg.feature_dim = 8;
    cfg.hidden_dim = 6;
    cfg.time_bins = 4;
    cfg.time_dim = 3;
    cfg.horizon = horizon;
    return cfg;
}

} // namespace

TEST_CASE("cosine preset closed forms") {
    const int T = 48;
    PresetSchedule p = preset_cosine(T);
    CHECK(std::fabs(p.action(T - 1).remask_ratio) < 1e-15); // cos(pi/2)
    CHECK(p.action(0).tau_remask == 2.0);
    for (int t = 0; t < T; t += 7) {
        CHECK(p.action(t).cfg_scale == 9.0);
        CHECK(p.action(t).tau_sample == 1.0);
        double want = std::cos(0.5 * kPi * static_cast<double>(t + 1) / T);
        CHECK(p.action(t).remask_ratio == doctest::Approx(want).epsilon(1e-15));
        CHECK(p.action(t).tau_remask ==
              doctest::Approx(2.0 * (T - t) / static_cast<double>(T)).epsilon(1e-15));
    }
    CHECK_THROWS_AS(p.action(T), std::invalid_argument);
}

TEST_CASE("gamma-exponentiated preset") {
    const int T = 48;
    PresetSchedule base = preset_cosine(T);
    PresetSchedule g1 = preset_cosine_gamma(T, 1.0);
    for (int t = 0; t < T; ++t) {
        CHECK(g1.action(t).remask_ratio == base.action(t).remask_ratio);
    }
    PresetSchedule g2 = preset_cosine_gamma(T, 2.0);
    // t+1 = T/3 -> cos(pi/6)^2 = 3/4
    CHECK(g2.action(T / 3 - 1).remask_ratio == doctest::Approx(0.75).epsilon(1e-12));
    for (double gamma : {0.5, 1.5, 3.0}) {
        CHECK(std::fabs(preset_cosine_gamma(T, gamma).action(T - 1).remask_ratio) < 1e-15);
    }
    CHECK_THROWS_AS(preset_cosine_gamma(T, 0.0), std::invalid_argument);
}

TEST_CASE("preset tokens parse") {
    CHECK(make_preset("table1", 16).gamma == 1.0);
    CHECK(make_preset("cosine", 16).gamma == 1.0);
    CHECK(make_preset("cosine_gamma:1.5", 16).gamma == doctest::Approx(1.5));
    CHECK_THROWS_AS(make_preset("cosine_gamma:x", 16), ConfigError);
    CHECK_THROWS_AS(make_preset("nope", 16), ConfigError);
}

TEST_CASE("squash ranges and midpoints") {
    RngState rng(4);
    for (int i = 0; i < 500; ++i) {
        std::array<double, 4> u;
        for (double& v : u) v = -50.0 + 100.0 * rng.next_double();
        ScheduleAction a = squash(u);
        // closed bounds: sigmoid saturates to exactly 0/1 near |u| = 40
        CHECK(a.remask_ratio >= 0.0);
        CHECK(a.remask_ratio <= 1.0);
        if (std::fabs(u[0]) < 30.0) {
            CHECK(a.remask_ratio > 0.0);
            CHECK(a.remask_ratio < 1.0);
        }
        CHECK(a.tau_sample >= 1e-3);
        CHECK(a.tau_remask >= 1e-3);
        CHECK(a.cfg_scale >= 0.0);
        CHECK(std::isfinite(a.tau_sample));
        CHECK(std::isfinite(a.cfg_scale));
    }
    CHECK(squash({0.0, 0.0, 0.0, 0.0}).remask_ratio == 0.5);
}

TEST_CASE("squash_inverse is a close right inverse on preset values") {
    PresetSchedule p = preset_cosine(48);
    for (int t = 0; t < 48; ++t) {
        ScheduleAction a = p.action(t);
        ScheduleAction back = squash(squash_inverse(a));
        CHECK(back.remask_ratio == doctest::Approx(a.remask_ratio).epsilon(1e-9));
        CHECK(back.tau_sample == doctest::Approx(a.tau_sample).epsilon(1e-9));
        CHECK(back.tau_remask == doctest::Approx(a.tau_remask).epsilon(1e-9));
        CHECK(back.cfg_scale == doctest::Approx(a.cfg_scale).epsilon(1e-9));
    }
}

TEST_CASE("sample_action degenerate and stochastic draws") {
    std::array<double, 4> mu{0.3, -0.2, 0.8, 2.0};
    RngState rng(8);
    ActionSample s0 = sample_action(mu, 0.0, rng);
    CHECK(s0.u == mu);
    CHECK(s0.action.remask_ratio == squash(mu).remask_ratio);

    ActionSample s1 = sample_action(mu, 0.1, rng);
    CHECK(s1.u != mu);
    CHECK_THROWS_AS(sample_action(mu, -0.1, rng), std::invalid_argument);
}

TEST_CASE("action log-density closed form, symmetry and replay") {
    std::array<double, 4> mu{0.1, 0.2, 0.3, 0.4};
    CHECK(action_log_prob(mu, 0.1, mu) == doctest::Approx(5.5345).epsilon(1e-4));
    std::array<double, 4> up = mu, down = mu;
    up[2] += 0.05;
    down[2] -= 0.05;
    CHECK(action_log_prob(mu, 0.1, up) == action_log_prob(mu, 0.1, down));
    CHECK_THROWS_AS(action_log_prob(mu, 0.0, mu), ContractViolation);

    RngState r(12);
    ActionSample s = sample_action(mu, 0.25, r);
    double lp1 = action_log_prob(mu, 0.25, s.u);
    double lp2 = action_log_prob(mu, 0.25, s.u);
    CHECK(lp1 == lp2);
}

TEST_CASE("action density integrates to one on a coarse grid") {
    std::array<double, 4> mu{0.0, 0.5, -0.5, 1.0};
    const double sigma = 0.5;
    const double h = 0.25;
    const int half = 8; // +/- 2.0 = 4 sigma
    // separable Gaussian: the 4-d trapezoid factorizes into per-axis sums
    double axis[4];
    for (int d = 0; d < 4; ++d) {
        double total = 0.0;
        for (int i = -half; i <= half; ++i) {
            double x = mu[static_cast<std::size_t>(d)] + i * h;
            double diff = x - mu[static_cast<std::size_t>(d)];
            double density = std::exp(-diff * diff / (2 * sigma * sigma)) /
                             std::sqrt(2 * kPi * sigma * sigma);
            total += (i == -half || i == half) ? 0.5 * density : density;
        }
        axis[d] = total * h;
    }
    double mass = axis[0] * axis[1] * axis[2] * axis[3];
    // cross-check one grid point against the joint density
    std::array<double, 4> probe{mu[0] + h, mu[1], mu[2] - h, mu[3]};
    double joint = std::exp(action_log_prob(mu, sigma, probe));
    double product = 1.0;
    for (int d = 0; d < 4; ++d) {
        double diff = probe[static_cast<std::size_t>(d)] - mu[static_cast<std::size_t>(d)];
        product *= std::exp(-diff * diff / (2 * sigma * sigma)) /
                   std::sqrt(2 * kPi * sigma * sigma);
    }
    CHECK(joint == doctest::Approx(product).epsilon(1e-12));
    CHECK(mass == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("fresh policy sits exactly on the baseline anchors") {
    SchedulePolicyConfig cfg = small_policy_config();
    RngState rng(6);
    SchedulePolicyParams phi(cfg, rng);
    auto anchors = phi.baseline_means();
    REQUIRE(anchors.size() == 8);
    std::vector<double> pooled(static_cast<std::size_t>(cfg.feature_dim), 0.37);
    for (int t = 0; t < cfg.horizon; ++t) {
        auto mu = policy_mean(phi, pooled, anchors[static_cast<std::size_t>(t)], t,
                              cfg.horizon);
        CHECK(mu == anchors[static_cast<std::size_t>(t)]); // zero-init output layer
    }
}

TEST_CASE("policy mean gradient matches finite differences") {
    SchedulePolicyConfig cfg = small_policy_config();
    RngState rng(16);
    SchedulePolicyParams phi(cfg, rng);
    // make the output layer nonzero so the gradient exercises every path
    for (auto& v : phi.store.entry("w2").value.data) v = 0.3 * rng.next_gaussian();
    for (auto& v : phi.store.entry("b2").value.data) v = 0.1 * rng.next_gaussian();
    CHECK(phi.store.total_params() <= 2000);

    std::vector<double> pooled(static_cast<std::size_t>(cfg.feature_dim));
    for (double& v : pooled) v = rng.next_gaussian();
    std::array<double, 4> anchor{0.1, -0.4, 0.9, 2.1};
    const int t = 3;

    for (int comp = 0; comp < 4; ++comp) {
        auto eval = [&]() {
            return policy_mean(phi, pooled, anchor, t,
                               cfg.horizon)[static_cast<std::size_t>(comp)];
        };
        Tape tape(true);
        auto leaves = make_policy_leaves(tape, phi);
        NodeId mu = policy_mean_node(tape, leaves, cfg, pooled, anchor, t, cfg.horizon);
        Tensor onehot({4});
        onehot.data[static_cast<std::size_t>(comp)] = 1.0;
        tape.backward(tape.sum(tape.mul(mu, tape.constant(onehot))));

        std::vector<Tensor*> ptrs;
        std::vector<Tensor> analytic;
        for (std::size_t i = 0; i < phi.store.count(); ++i) {
            ptrs.push_back(&phi.store.entry(i).value);
            analytic.push_back(tape.grad(leaves.all[i]));
        }
        RngState probe(99 + static_cast<std::uint64_t>(comp));
        auto rep = fd::compare(eval, ptrs, analytic, 1e-5, 60, &probe);
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("interpolation: identity, constants, midpoint, endpoints") {
    std::vector<std::array<double, 4>> means = {
        {0.0, 1.0, 2.0, 3.0}, {1.0, 1.5, 2.0, 2.5}, {4.0, 3.0, 2.0, 1.0}};
    CHECK(interpolate_schedule(means, 3) == means);

    std::vector<std::array<double, 4>> constant(5, {0.7, 0.7, 0.7, 0.7});
    auto stretched = interpolate_schedule(constant, 9);
    for (const auto& m : stretched) {
        for (double v : m) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
    }

    std::vector<std::array<double, 4>> two = {{0.0, 2.0, 4.0, 6.0}, {1.0, 3.0, 5.0, 7.0}};
    auto three = interpolate_schedule(two, 3);
    REQUIRE(three.size() == 3);
    CHECK(three[0] == two[0]);
    CHECK(three[2] == two[1]);
    for (int k = 0; k < 4; ++k) {
        CHECK(three[1][static_cast<std::size_t>(k)] ==
              doctest::Approx((two[0][static_cast<std::size_t>(k)] +
                               two[1][static_cast<std::size_t>(k)]) /
                              2.0)
                  .epsilon(1e-15));
    }
    CHECK_THROWS_AS(interpolate_schedule({{0, 0, 0, 0}}, 4), std::invalid_argument);
    CHECK_THROWS_AS(interpolate_schedule(two, 0), std::invalid_argument);
}

TEST_CASE("anchor means interpolate when the horizon changes") {
    SchedulePolicyConfig cfg = small_policy_config(8);
    RngState rng(3);
    SchedulePolicyParams phi(cfg, rng);
    CHECK(anchor_means(phi, 8) == phi.baseline_means());
    auto transferred = anchor_means(phi, 5);
    CHECK(transferred.size() == 5);
    CHECK(transferred.front() == phi.baseline_means().front());
    CHECK(transferred.back() == phi.baseline_means().back());
}

TEST_CASE("policy parameter budget stays under 5% of the denoiser") {
    DenoiserConfig dcfg; // defaults
    RngState rng(1);
    DenoiserParams theta(dcfg, rng);
    SchedulePolicyConfig pcfg; // defaults (feature_dim 64)
    SchedulePolicyParams phi(pcfg, rng);
    double ratio = static_cast<double>(phi.store.total_params()) /
                   static_cast<double>(theta.store.total_params());
    CHECK(ratio < 0.05);
}

TEST_CASE("pinned policy at sigma 0 reduces to the preset sampler bit-for-bit") {
    DenoiserConfig dcfg;
    RngState rng(71);
    DenoiserParams theta(dcfg, rng);
    const int T = 16;
    SchedulePolicyConfig pcfg;
    pcfg.horizon = T;
    RngState prng(72);
    SchedulePolicyParams phi(pcfg, prng);

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        PresetScheduleSource preset_src(preset_cosine(T));
        LearnedScheduleSource pinned_src(phi, T, 0.0, true);
        RngState r1(9000 + seed), r2(9000 + seed);
        auto cond = Condition::of(static_cast<int>(seed % 8));
        Trajectory a = generate_trajectory(theta, preset_src, cond, T, r1);
        Trajectory b = generate_trajectory(theta, pinned_src, cond, T, r2);
        CHECK(trajectories_identical(a, b));
    }
}

TEST_CASE("unpinned sigma-0 policy reproduces preset actions to round-off") {
    DenoiserConfig dcfg;
    RngState rng(81);
    DenoiserParams theta(dcfg, rng);
    const int T = 12;
    SchedulePolicyConfig pcfg;
    pcfg.horizon = T;
    RngState prng(82);
    SchedulePolicyParams phi(pcfg, prng);

    PresetScheduleSource preset_src(preset_cosine(T));
    LearnedScheduleSource policy_src(phi, T, 0.0);
    RngState r1(4242), r2(4242);
    Trajectory a = generate_trajectory(theta, preset_src, Condition::of(2), T, r1);
    Trajectory b = generate_trajectory(theta, policy_src, Condition::of(2), T, r2);
    CHECK(a.final_seq == b.final_seq);
    for (int t = 0; t < T; ++t) {
        auto sa = a.steps[static_cast<std::size_t>(t)].schedule;
        auto sb = b.steps[static_cast<std::size_t>(t)].schedule;
        CHECK(sb.remask_ratio == doctest::Approx(sa.remask_ratio).epsilon(1e-12));
        CHECK(sb.tau_sample == doctest::Approx(sa.tau_sample).epsilon(1e-12));
        CHECK(sb.tau_remask == doctest::Approx(sa.tau_remask).epsilon(1e-12));
        CHECK(sb.cfg_scale == doctest::Approx(sa.cfg_scale).epsilon(1e-12));
    }
}

TEST_CASE("learned source contracts") {
    SchedulePolicyConfig cfg = small_policy_config(6);
    RngState rng(5);
    SchedulePolicyParams phi(cfg, rng);
    LearnedScheduleSource src(phi, 6, 0.1);
    CHECK(src.stochastic());
    LearnedScheduleSource frozen(phi, 6, 0.0);
    CHECK_FALSE(frozen.stochastic());
    CHECK_THROWS_AS(LearnedScheduleSource(phi, 6, 0.1, true), std::invalid_argument);

    ScheduleStepContext ctx;
    ctx.t = 0;
    ctx.horizon = 7; // mismatch
    std::vector<double> pooled(8, 0.0);
    ctx.pooled_features = &pooled;
    RngState r(1);
    CHECK_THROWS_AS(src.decide(ctx, r), ContractViolation);
}
