#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace mdmrl {

/// Counter-based deterministic random source. The n-th draw is a pure
/// function of (seed, n), so identical seeds and call sequences give
/// bit-identical streams, and fork() derives independent child streams
/// without sharing state.
class RngState {
  public:
    explicit RngState(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double next_double();
    /// Standard normal via Box-Muller (consumes two uniforms).
    double next_gaussian();
    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n);
    /// Categorical draw by inverse CDF over (possibly unnormalized) weights.
    std::size_t next_categorical(std::span<const double> weights);

    /// Derive an independent stream. Children of successive fork() calls
    /// differ even under the same label; the parent advances by one draw.
    RngState fork(std::string_view label);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

  private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace mdmrl
