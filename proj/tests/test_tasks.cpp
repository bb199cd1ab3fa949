#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mdmrl/errors.hpp"
#include "mdmrl/tasks.hpp"

using namespace mdmrl;

namespace {

TaskSpec default_task() {
    TaskSpec spec;
    spec.build_patterns();
    return spec;
}

TokenSequence seq_of(std::vector<int> tokens, int vocab = 16) {
    TokenSequence s;
    s.tokens = std::move(tokens);
    s.vocab_size = vocab;
    return s;
}

} // namespace

TEST_CASE("patterns are valid, distinct and rough enough") {
    TaskSpec spec = default_task();
    REQUIRE(spec.patterns.size() == 8);
    for (const auto& p : spec.patterns) {
        REQUIRE(p.size() == 16);
        for (int tok : p) {
            CHECK(tok >= 1);
            CHECK(tok <= 16);
        }
        int rough = 0;
        for (std::size_t i = 0; i + 1 < p.size(); ++i) {
            if (std::abs(p[i] - p[i + 1]) > 1) ++rough;
        }
        CHECK(rough >= static_cast<int>(std::ceil(0.2 * 15)));
    }
    for (std::size_t a = 0; a < spec.patterns.size(); ++a) {
        for (std::size_t b = a + 1; b < spec.patterns.size(); ++b) {
            CHECK(spec.patterns[a] != spec.patterns[b]);
        }
    }
    // same seed, same patterns
    TaskSpec again = default_task();
    CHECK(again.patterns == spec.patterns);
    CHECK(again.hash() == spec.hash());
}

TEST_CASE("pretrain pairs: zero corruption reproduces the pattern") {
    TaskSpec spec = default_task();
    spec.corruption_rate = 0.0;
    RngState rng(17);
    for (int i = 0; i < 200; ++i) {
        auto [seq, cond] = sample_pretrain_pair(spec, rng);
        CHECK(seq.tokens == spec.patterns[static_cast<std::size_t>(cond.class_id)]);
    }
}

TEST_CASE("pretrain pairs: corruption count matches the binomial expectation") {
    TaskSpec spec = default_task();
    spec.corruption_rate = 0.25;
    RngState rng(18);
    const int trials = 10000;
    double total_diff = 0.0;
    for (int i = 0; i < trials; ++i) {
        auto [seq, cond] = sample_pretrain_pair(spec, rng);
        const auto& pattern = spec.patterns[static_cast<std::size_t>(cond.class_id)];
        for (std::size_t j = 0; j < seq.length(); ++j) {
            if (seq.tokens[j] != pattern[j]) total_diff += 1.0;
        }
    }
    // corrupted positions ~ Binomial(16, 0.25): mean 4, se of the sample
    // mean over 1e4 trials ~ 0.017
    CHECK(total_diff / trials == doctest::Approx(4.0).epsilon(0.03));
}

TEST_CASE("pretrain pairs: conditions drawn uniformly") {
    TaskSpec spec = default_task();
    RngState rng(19);
    const int trials = 10000;
    std::vector<int> counts(8, 0);
    for (int i = 0; i < trials; ++i) {
        auto [seq, cond] = sample_pretrain_pair(spec, rng);
        ++counts[static_cast<std::size_t>(cond.class_id)];
    }
    // 3 sigma ~ 99 around 1250
    for (int c : counts) CHECK(std::abs(c - 1250) < 120);
}

TEST_CASE("reward_match fractions") {
    TaskSpec spec = default_task();
    auto pattern = spec.patterns[0];
    TokenSequence exact = seq_of(pattern);
    CHECK(reward_match(exact, Condition::of(0), spec) == 1.0);

    TokenSequence half = exact;
    for (std::size_t i = 0; i < 8; ++i) {
        half.tokens[i] = pattern[i] == 16 ? 1 : 16;
        if (half.tokens[i] == pattern[i]) half.tokens[i] = 2;
    }
    CHECK(reward_match(half, Condition::of(0), spec) == 0.5);

    TokenSequence masky = exact;
    masky.tokens[3] = kMaskToken;
    CHECK_THROWS_AS(reward_match(masky, Condition::of(0), spec), ContractViolation);
    CHECK_THROWS_AS(reward_match(exact, Condition::null(), spec), std::invalid_argument);
}

TEST_CASE("reward_match is invariant to joint permutations") {
    TaskSpec spec = default_task();
    spec.patterns[0] = {1, 5, 9, 2, 2, 3, 8, 8, 1, 16, 4, 4, 7, 6, 10, 12};
    TokenSequence seq = seq_of({1, 5, 2, 2, 2, 3, 8, 1, 1, 16, 4, 9, 7, 6, 10, 11});
    double before = reward_match(seq, Condition::of(0), spec);
    // rotate both by 5
    std::rotate(spec.patterns[0].begin(), spec.patterns[0].begin() + 5, spec.patterns[0].end());
    std::rotate(seq.tokens.begin(), seq.tokens.begin() + 5, seq.tokens.end());
    CHECK(reward_match(seq, Condition::of(0), spec) == before);
}

TEST_CASE("reward_smooth hand cases") {
    CHECK(reward_smooth(seq_of(std::vector<int>(16, 7))) == 1.0);
    std::vector<int> alt;
    for (int i = 0; i < 16; ++i) alt.push_back(i % 2 == 0 ? 1 : 16);
    CHECK(reward_smooth(seq_of(alt)) == 0.0);
    std::vector<int> ramp;
    for (int i = 1; i <= 16; ++i) ramp.push_back(i);
    CHECK(reward_smooth(seq_of(ramp)) == 1.0);
    TokenSequence masky = seq_of(ramp);
    masky.tokens[0] = kMaskToken;
    CHECK_THROWS_AS(reward_smooth(masky), ContractViolation);
}

TEST_CASE("composite reward combines components") {
    TaskSpec spec = default_task();
    RewardSpec rewards;
    TokenSequence exact = seq_of(spec.patterns[2]);

    // degenerate weights reduce to the single component
    rewards.components = {{"match", 1.0}, {"smooth", 0.0}};
    CHECK(composite_reward(exact, Condition::of(2), spec, rewards) ==
          reward_match(exact, Condition::of(2), spec));

    rewards.components = {{"match", 0.5}, {"smooth", 0.5}};
    double expect = 0.5 * reward_match(exact, Condition::of(2), spec) +
                    0.5 * reward_smooth(exact);
    CHECK(composite_reward(exact, Condition::of(2), spec, rewards) ==
          doctest::Approx(expect).epsilon(1e-15));
    CHECK(0.5 * 0.6 + 0.5 * 0.8 == doctest::Approx(0.7)); // weight arithmetic

    RewardSpec bad;
    bad.components = {{"match", 0.7}, {"smooth", 0.5}};
    CHECK_THROWS_AS(composite_reward(exact, Condition::of(2), spec, bad), ConfigError);
}

TEST_CASE("rewards stay in [0,1] on random sequences") {
    TaskSpec spec = default_task();
    RewardSpec rewards;
    RngState rng(31);
    for (int i = 0; i < 300; ++i) {
        TokenSequence s(16, 16);
        for (auto& t : s.tokens) t = 1 + static_cast<int>(rng.next_below(16));
        auto cond = Condition::of(static_cast<int>(rng.next_below(8)));
        double m = reward_match(s, cond, spec);
        double sm = reward_smooth(s);
        double c = composite_reward(s, cond, spec, rewards);
        CHECK(m >= 0.0);
        CHECK(m <= 1.0);
        CHECK(sm >= 0.0);
        CHECK(sm <= 1.0);
        CHECK(c >= 0.0);
        CHECK(c <= 1.0);
    }
}

TEST_CASE("task spec validation") {
    TaskSpec spec;
    spec.corruption_rate = 0.6;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.corruption_rate = 0.2;
    spec.train_conditions = 9;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}
