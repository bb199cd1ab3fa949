#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mdmrl/tensor.hpp"

namespace mdmrl {

/// One bias-corrected Adam step over flat arrays. Moments are updated in
/// place; step_index starts at 1.
void adam_update(std::span<double> params, std::span<const double> grads,
                 std::span<double> m, std::span<double> v, std::uint64_t step_index,
                 double lr, double beta1, double beta2, double eps);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
};

struct ParamEntry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
};

/// Named parameter arrays with paired gradient and optimizer-moment arrays.
/// Entry order is creation order and is preserved by serialization.
class ParamStore {
  public:
    Tensor& add(const std::string& name, Tensor init);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    ParamEntry& entry(const std::string& name);
    const ParamEntry& entry(const std::string& name) const;
    ParamEntry& entry(std::size_t i) { return entries_[i]; }
    const ParamEntry& entry(std::size_t i) const { return entries_[i]; }
    std::size_t count() const { return entries_.size(); }
    std::size_t total_params() const;

    void zero_grads();
    /// Bias-corrected Adam over every entry; increments and returns the
    /// store's step counter.
    std::uint64_t adam_step(const AdamConfig& cfg);

    std::uint64_t step_counter = 0;

    /// Raw bytes of names + values, in entry order (hash/equality input).
    std::vector<std::uint8_t> value_bytes() const;

  private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// SHA-256 hex digest of arbitrary bytes.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string param_hash(const ParamStore& store);

} // namespace mdmrl
