#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdmrl/rng.hpp"
#include "mdmrl/sequence.hpp"

namespace mdmrl {

/// Synthetic conditional generation task: each condition has a fixed target
/// pattern; pretraining data is the pattern with independent token
/// corruption. Patterns are a pure function of pattern_seed, so a config
/// file pins them across machines.
struct TaskSpec {
    int vocab_size = 16;
    int length = 16;
    int num_conditions = 8;
    int train_conditions = 6; // RL rollouts draw from [0, train_conditions)
    double corruption_rate = 0.2;
    std::uint64_t pattern_seed = 20240601;
    // Minimum fraction of adjacent pattern pairs with |a-b| > 1, so the
    // match and smoothness rewards genuinely conflict.
    double min_rough_fraction = 0.2;

    std::vector<std::vector<int>> patterns; // built by build_patterns()

    void validate() const;
    void build_patterns();
    std::uint64_t hash() const;
    std::string patterns_json() const;
};

struct RewardSpec {
    std::vector<std::pair<std::string, double>> components = {
        {"match", 0.5}, {"smooth", 0.5}};

    void validate() const;
};

/// Draw (full sequence, condition) for pretraining: uniform condition, its
/// pattern with each position independently replaced (at corruption_rate)
/// by a uniform draw over the other V-1 tokens.
std::pair<TokenSequence, Condition> sample_pretrain_pair(const TaskSpec& spec, RngState& rng);

/// Fraction of positions equal to the condition's target pattern, in [0,1].
double reward_match(const TokenSequence& seq, Condition cond, const TaskSpec& spec);

/// Fraction of adjacent pairs whose token difference is at most 1, in [0,1].
double reward_smooth(const TokenSequence& seq);

/// Weighted combination of the named components.
double composite_reward(const TokenSequence& seq, Condition cond, const TaskSpec& spec,
                        const RewardSpec& rewards);

} // namespace mdmrl
