#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mdmrl/checkpoint.hpp"
#include "mdmrl/config.hpp"
#include "mdmrl/grpo.hpp"

namespace mdmrl {

/// Fixed layout of one run directory.
struct RunPaths {
    std::filesystem::path dir;
    std::filesystem::path manifest() const { return dir / "manifest.json"; }
    std::filesystem::path config_snapshot() const { return dir / "config_snapshot.ini"; }
    std::filesystem::path reference_config() const { return dir / "reference_config.ini"; }
    std::filesystem::path metrics() const { return dir / "metrics.jsonl"; }
    std::filesystem::path checkpoint() const { return dir / "checkpoint.bin"; }
    std::filesystem::path report() const { return dir / "report.json"; }
    std::filesystem::path sweep_csv() const { return dir / "sweep.csv"; }
    std::filesystem::path patterns() const { return dir / "patterns.json"; }
    std::filesystem::path rollouts() const { return dir / "rollouts.jsonl"; }
};

struct PretrainResult {
    double final_loss_ma = 0.0; // mean loss of the last 50 iterations
    RunPaths paths;
};

PretrainResult cmd_pretrain(const Config& cfg, const std::filesystem::path& out_dir);

struct TrainRunResult {
    TrainResult train;
    RunPaths paths;
};

/// mode: "naive" | "co-joint" | "co-alternating".
TrainRunResult cmd_train(const Config& cfg, const std::string& mode,
                         const std::filesystem::path& init_checkpoint,
                         const std::filesystem::path& out_dir);

struct RewardStats {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation
    int n = 0;
};

struct EvalReport {
    int steps = 0;
    double sigma = 0.0;
    std::string schedule_source;
    bool interpolated = false;
    int n = 0;
    RewardStats match, smooth, composite;
    RewardStats composite_seen, composite_held_out;
    std::vector<RewardStats> per_condition;

    std::string to_json() const;
};

struct EvalOptions {
    int steps = 0;                  // 0 = the checkpoint's training horizon
    double sigma = 0.0;
    std::string schedule;           // "" = policy when present, else the config preset
    int num_conditions = 0;         // 0 = all
    int samples_per_condition = 0;  // 0 = config value
};

EvalReport cmd_eval(const std::filesystem::path& checkpoint_path, const EvalOptions& opts,
                    const std::filesystem::path& out_dir);

struct SweepCell {
    double gamma = 0.0;
    int steps = 0;
    RewardStats composite;
};

std::vector<SweepCell> cmd_sweep_gamma(const std::filesystem::path& checkpoint_path,
                                       const std::vector<double>& gammas,
                                       const std::vector<int>& steps,
                                       const std::filesystem::path& out_dir,
                                       std::optional<int> samples_per_cell = std::nullopt);

/// Build-time content hash of the sources (manifest metadata).
std::string source_hash();

} // namespace mdmrl
