#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mdmrl {

/// Token value occupying undecided positions.
inline constexpr int kMaskToken = 0;

/// Length-N sequence over vocabulary {1..V} plus the mask token.
struct TokenSequence {
    std::vector<int> tokens;
    int vocab_size = 0;

    TokenSequence() = default;
    TokenSequence(std::size_t length, int vocab)
        : tokens(length, kMaskToken), vocab_size(vocab) {}

    std::size_t length() const { return tokens.size(); }
    bool is_mask(std::size_t i) const { return tokens[i] == kMaskToken; }
    std::size_t mask_count() const {
        std::size_t n = 0;
        for (int t : tokens) n += (t == kMaskToken) ? 1 : 0;
        return n;
    }
    bool fully_committed() const { return mask_count() == 0; }

    void validate() const {
        for (int t : tokens) {
            if (t < 0 || t > vocab_size) {
                throw std::invalid_argument("TokenSequence: token out of range");
            }
        }
    }

    bool operator==(const TokenSequence& o) const {
        return vocab_size == o.vocab_size && tokens == o.tokens;
    }
};

/// Class label conditioning a generation, or the unconditional branch.
struct Condition {
    int class_id = -1; // -1 = unconditional

    static Condition null() { return Condition{-1}; }
    static Condition of(int id) { return Condition{id}; }
    bool is_null() const { return class_id < 0; }
    bool operator==(const Condition& o) const { return class_id == o.class_id; }
};

} // namespace mdmrl
