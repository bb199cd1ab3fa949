#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mdmrl/errors.hpp"
#include "mdmrl/params.hpp"
#include "mdmrl/tensor.hpp"

namespace mdmrl {

struct CheckpointVersionError : PreconditionError {
    using PreconditionError::PreconditionError;
};

struct TaskMismatchError : PreconditionError {
    using PreconditionError::PreconditionError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Self-describing binary container: magic, version, byte-order tag, run
/// metadata, the effective config text, then a directory of named f64
/// arrays. Round trips are bit-exact.
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::uint64_t seed = 0;
    std::uint64_t task_hash = 0;
    std::uint64_t model_steps = 0;
    std::uint64_t schedule_steps = 0;
    std::uint64_t updates_done = 0;
    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> arrays;

    bool has_array(const std::string& name) const;
    const Tensor& array(const std::string& name) const;
    bool has_prefix(const std::string& prefix) const;

    /// Append a store's values and Adam moments as
    /// <prefix><name>, <prefix><name>.m, <prefix><name>.v.
    void pack_store(const std::string& prefix, const ParamStore& store);
    /// Restore values and moments into an already-shaped store.
    void unpack_store(const std::string& prefix, ParamStore& store) const;
};

void checkpoint_save(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Validates magic, version and byte order before reading any array; a
/// short or corrupt file raises IoError without returning partial state.
Checkpoint checkpoint_load(const std::filesystem::path& path);

/// Raises TaskMismatchError naming both hashes when they differ.
void verify_task_hash(const Checkpoint& ckpt, std::uint64_t expected);

} // namespace mdmrl
