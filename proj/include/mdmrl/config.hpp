#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mdmrl/denoiser.hpp"
#include "mdmrl/grpo.hpp"
#include "mdmrl/schedule_policy.hpp"
#include "mdmrl/tasks.hpp"

namespace mdmrl {

/// Effective experiment configuration. Files use flat `section.key = value`
/// lines; every key has a documented default, but the task block must be
/// spelled out in any provided file since it defines the experiment
/// identity. Environment variables MDMRL_<key, '.' -> '__'> override file
/// values.
struct Config {
    std::uint64_t seed = 12345;

    TaskSpec task;
    RewardSpec rewards;

    int model_hidden_dim = 64;
    int model_layers = 2;
    int model_time_bins = 16;

    int policy_hidden_dim = 16;
    int policy_time_bins = 16;
    int policy_time_dim = 8;

    std::string schedule_preset = "table1";

    int pretrain_iterations = 2500;
    int pretrain_batch_size = 32;
    double pretrain_lr = 1e-3;
    PretrainOptions pretrain_opts;
    int pretrain_log_every = 1;

    TrainConfig train;

    int eval_samples_per_condition = 16;
    double eval_sigma = 0.0;

    int sweep_samples_per_cell = 64;

    static Config defaults();
    /// Parse and validate a config file. Missing task keys, unknown keys,
    /// malformed values and invariant violations all raise ConfigError.
    static Config from_file(const std::filesystem::path& path);
    static Config from_text(const std::string& text, bool require_task_block);

    /// Re-run invariant checks (ConfigError on violation).
    void validate() const;

    /// Effective values, one per line, parseable by from_text.
    std::string to_text() const;
    /// Defaults with inline documentation.
    static std::string reference_text();

    DenoiserConfig denoiser_config() const;
    SchedulePolicyConfig policy_config() const;
};

} // namespace mdmrl
