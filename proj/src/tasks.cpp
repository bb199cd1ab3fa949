#include "mdmrl/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mdmrl/errors.hpp"

namespace mdmrl {

namespace {

std::size_t rough_pairs(const std::vector<int>& pattern) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < pattern.size(); ++i) {
        if (std::abs(pattern[i] - pattern[i + 1]) > 1) ++n;
    }
    return n;
}

std::vector<int> draw_pattern(const TaskSpec& spec, RngState& rng) {
    std::vector<int> p(static_cast<std::size_t>(spec.length));
    p[0] = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.vocab_size)));
    for (std::size_t i = 1; i < p.size(); ++i) {
        if (rng.next_double() < 0.65) {
            // smooth move: stay or step by one, clamped to the vocabulary
            int delta = static_cast<int>(rng.next_below(3)) - 1;
            p[i] = std::clamp(p[i - 1] + delta, 1, spec.vocab_size);
        } else {
            // jump at least two tokens away
            int tok;
            do {
                tok = 1 + static_cast<int>(
                              rng.next_below(static_cast<std::uint64_t>(spec.vocab_size)));
            } while (std::abs(tok - p[i - 1]) <= 1);
            p[i] = tok;
        }
    }
    return p;
}

} // namespace

void TaskSpec::validate() const {
    if (vocab_size < 2) throw ConfigError("task.vocab_size must be at least 2");
    if (length < 2) throw ConfigError("task.length must be at least 2");
    if (num_conditions < 1) throw ConfigError("task.num_conditions must be at least 1");
    if (train_conditions < 1 || train_conditions > num_conditions) {
        throw ConfigError("task.train_conditions must be in [1, task.num_conditions]");
    }
    if (!(corruption_rate >= 0.0 && corruption_rate < 0.5)) {
        throw ConfigError("task.corruption_rate must be in [0, 0.5)");
    }
    if (!(min_rough_fraction >= 0.0 && min_rough_fraction < 1.0)) {
        throw ConfigError("task.min_rough_fraction must be in [0, 1)");
    }
}

void TaskSpec::build_patterns() {
    validate();
    patterns.clear();
    RngState rng(pattern_seed);
    auto need = static_cast<std::size_t>(
        std::ceil(min_rough_fraction * static_cast<double>(length - 1)));
    for (int c = 0; c < num_conditions; ++c) {
        RngState crng = rng.fork("pattern");
        std::vector<int> p;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            p = draw_pattern(*this, crng);
            bool distinct = std::find(patterns.begin(), patterns.end(), p) == patterns.end();
            if (rough_pairs(p) >= need && distinct) break;
            p.clear();
        }
        if (p.empty()) {
            throw std::logic_error("TaskSpec: could not construct a valid pattern");
        }
        patterns.push_back(std::move(p));
    }
}

std::uint64_t TaskSpec::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t x) {
        for (int i = 0; i < 8; ++i) {
            h ^= (x >> (8 * i)) & 0xff;
            h *= 0x100000001b3ull;
        }
    };
    mix(static_cast<std::uint64_t>(vocab_size));
    mix(static_cast<std::uint64_t>(length));
    mix(static_cast<std::uint64_t>(num_conditions));
    mix(static_cast<std::uint64_t>(train_conditions));
    mix(static_cast<std::uint64_t>(corruption_rate * 1e9));
    mix(pattern_seed);
    for (const auto& p : patterns) {
        for (int t : p) mix(static_cast<std::uint64_t>(t));
    }
    return h;
}

std::string TaskSpec::patterns_json() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t c = 0; c < patterns.size(); ++c) {
        if (c) os << ",";
        os << "[";
        for (std::size_t i = 0; i < patterns[c].size(); ++i) {
            if (i) os << ",";
            os << patterns[c][i];
        }
        os << "]";
    }
    os << "]";
    return os.str();
}

void RewardSpec::validate() const {
    double total = 0.0;
    for (const auto& [name, w] : components) {
        if (name != "match" && name != "smooth") {
            throw ConfigError("reward: unknown component '" + name + "'");
        }
        if (w < 0.0) throw ConfigError("reward: weights must be nonnegative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("reward: weights must sum to 1");
    }
}

std::pair<TokenSequence, Condition> sample_pretrain_pair(const TaskSpec& spec, RngState& rng) {
    if (spec.patterns.empty()) {
        throw ContractViolation("sample_pretrain_pair: patterns not built");
    }
    int c = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.num_conditions)));
    TokenSequence seq(static_cast<std::size_t>(spec.length), spec.vocab_size);
    const auto& pattern = spec.patterns[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < seq.length(); ++i) {
        int tok = pattern[i];
        if (rng.next_double() < spec.corruption_rate) {
            // replacement drawn over the other V-1 tokens, so a corruption
            // event always changes the position
            int r = 1 + static_cast<int>(
                            rng.next_below(static_cast<std::uint64_t>(spec.vocab_size - 1)));
            tok = (r >= tok) ? r + 1 : r;
        }
        seq.tokens[i] = tok;
    }
    return {std::move(seq), Condition::of(c)};
}

double reward_match(const TokenSequence& seq, Condition cond, const TaskSpec& spec) {
    if (!seq.fully_committed()) {
        throw ContractViolation("reward_match: sequence contains mask tokens");
    }
    if (cond.is_null() || cond.class_id >= spec.num_conditions) {
        throw std::invalid_argument("reward_match: invalid condition");
    }
    const auto& pattern = spec.patterns.at(static_cast<std::size_t>(cond.class_id));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < seq.length(); ++i) {
        if (seq.tokens[i] == pattern[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(seq.length());
}

double reward_smooth(const TokenSequence& seq) {
    if (!seq.fully_committed()) {
        throw ContractViolation("reward_smooth: sequence contains mask tokens");
    }
    if (seq.length() < 2) return 1.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i + 1 < seq.length(); ++i) {
        if (std::abs(seq.tokens[i] - seq.tokens[i + 1]) <= 1) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(seq.length() - 1);
}

double composite_reward(const TokenSequence& seq, Condition cond, const TaskSpec& spec,
                        const RewardSpec& rewards) {
    rewards.validate();
    double total = 0.0;
    for (const auto& [name, w] : rewards.components) {
        if (name == "match") {
            total += w * reward_match(seq, cond, spec);
        } else if (name == "smooth") {
            total += w * reward_smooth(seq);
        }
    }
    return total;
}

} // namespace mdmrl
