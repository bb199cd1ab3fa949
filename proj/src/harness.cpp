#include "mdmrl/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <deque>
#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>

#include "mdmrl/errors.hpp"
#include "mdmrl/sampler.hpp"

namespace mdmrl {

namespace {

using json = nlohmann::ordered_json;

std::string iso_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&tt, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("short write to " + path.string());
}

// Run manifest: written with status "running" before any work, finalized
// with status "complete" plus a self-audit that every declared output
// exists. Timestamps live only here so metric streams stay byte-identical
// across reruns.
class Manifest {
  public:
    Manifest(const RunPaths& paths, std::string command, const Config& cfg)
        : paths_(paths), command_(std::move(command)), seed_(cfg.seed) {}

    void declare(const std::filesystem::path& p) { outputs_.push_back(p.filename().string()); }

    void start() {
        started_ = iso_now();
        write("running");
    }

    void finalize() {
        for (const std::string& name : outputs_) {
            if (!std::filesystem::exists(paths_.dir / name)) {
                throw IoError("run self-audit: declared output missing: " + name);
            }
        }
        write("complete");
    }

  private:
    void write(const std::string& status) const {
        json j;
        j["command"] = command_;
        j["seed"] = seed_;
        j["source_hash"] = source_hash();
        j["config_snapshot"] = paths_.config_snapshot().filename().string();
        j["outputs"] = outputs_;
        j["started"] = started_;
        j["ended"] = status == "complete" ? iso_now() : "";
        j["status"] = status;
        write_file(paths_.manifest(), j.dump(2) + "\n");
    }

    RunPaths paths_;
    std::string command_;
    std::uint64_t seed_;
    std::vector<std::string> outputs_;
    std::string started_;
};

class MetricsWriter {
  public:
    explicit MetricsWriter(const std::filesystem::path& path)
        : out_(path, std::ios::trunc) {
        if (!out_) throw IoError("cannot write " + path.string());
    }
    void write(const json& record) { out_ << record.dump() << "\n"; }
    void flush() { out_.flush(); }

  private:
    std::ofstream out_;
};

RunPaths prepare_run_dir(const std::filesystem::path& out_dir, const Config& cfg) {
    RunPaths paths{out_dir};
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw IoError("cannot create output directory " + out_dir.string());
    }
    write_file(paths.config_snapshot(), cfg.to_text());
    write_file(paths.reference_config(), Config::reference_text());
    write_file(paths.patterns(), cfg.task.patterns_json() + "\n");
    return paths;
}

json update_record(const UpdateStats& s) {
    json j;
    j["update"] = s.update;
    j["phase"] = s.phase;
    j["mean_reward"] = s.mean_reward;
    j["loss"] = s.loss;
    j["mean_ratio"] = s.mean_ratio;
    j["clip_fraction"] = s.clip_fraction;
    j["grad_norm"] = s.grad_norm;
    return j;
}

RewardStats stats_of(const std::vector<double>& xs) {
    RewardStats s;
    s.n = static_cast<int>(xs.size());
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double var = 0.0;
        for (double x : xs) var += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(var / static_cast<double>(xs.size() - 1));
    }
    return s;
}

struct LoadedCheckpoint {
    Checkpoint ckpt;
    Config cfg;
    DenoiserParams theta;
    std::optional<SchedulePolicyParams> phi;
};

LoadedCheckpoint load_model_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw PreconditionError("checkpoint not found: " + path.string());
    }
    Checkpoint ckpt = checkpoint_load(path);
    Config cfg = Config::from_text(ckpt.config_text, false);
    verify_task_hash(ckpt, cfg.task.hash());
    LoadedCheckpoint out{std::move(ckpt), cfg, DenoiserParams::zeros(cfg.denoiser_config()),
                         std::nullopt};
    out.ckpt.unpack_store("theta.", out.theta.store);
    out.theta.store.step_counter = out.ckpt.model_steps;
    if (out.ckpt.has_prefix("phi.")) {
        RngState dummy(0);
        SchedulePolicyParams phi(cfg.policy_config(), dummy);
        out.ckpt.unpack_store("phi.", phi.store);
        phi.store.step_counter = out.ckpt.schedule_steps;
        out.phi = std::move(phi);
    }
    return out;
}

} // namespace

std::string source_hash() {
#ifdef MDMRL_SOURCE_HASH
    return MDMRL_SOURCE_HASH;
#else
    return "unknown";
#endif
}

PretrainResult cmd_pretrain(const Config& cfg, const std::filesystem::path& out_dir) {
    RunPaths paths = prepare_run_dir(out_dir, cfg);
    Manifest manifest(paths, "pretrain", cfg);
    manifest.declare(paths.config_snapshot());
    manifest.declare(paths.reference_config());
    manifest.declare(paths.patterns());
    manifest.declare(paths.metrics());
    manifest.declare(paths.checkpoint());
    manifest.start();

    MetricsWriter metrics(paths.metrics());
    RngState root(cfg.seed);
    RngState init_rng = root.fork("model-init");
    RngState data_rng = root.fork("pretrain-data");

    DenoiserParams theta(cfg.denoiser_config(), init_rng);
    AdamConfig adam = cfg.train.adam;
    adam.lr = cfg.pretrain_lr;

    std::deque<double> window;
    double window_sum = 0.0;
    Tape tape(true);
    for (int iter = 1; iter <= cfg.pretrain_iterations; ++iter) {
        PretrainBatch batch;
        batch.reserve(static_cast<std::size_t>(cfg.pretrain_batch_size));
        for (int b = 0; b < cfg.pretrain_batch_size; ++b) {
            batch.push_back(sample_pretrain_pair(cfg.task, data_rng));
        }
        tape.clear();
        auto leaves = make_denoiser_leaves(tape, theta);
        NodeId loss = masked_pretrain_loss(tape, leaves, theta.config, batch,
                                           cfg.pretrain_opts, data_rng);
        tape.backward(loss);
        theta.store.zero_grads();
        accumulate_denoiser_grads(tape, leaves, theta);
        double grad_sq = 0.0;
        for (std::size_t i = 0; i < theta.store.count(); ++i) {
            for (double g : theta.store.entry(i).grad.data) grad_sq += g * g;
        }
        theta.store.adam_step(adam);

        double loss_value = tape.value_scalar(loss);
        window.push_back(loss_value);
        window_sum += loss_value;
        if (window.size() > 50) {
            window_sum -= window.front();
            window.pop_front();
        }
        if (iter % cfg.pretrain_log_every == 0 || iter == cfg.pretrain_iterations) {
            json j;
            j["update"] = iter;
            j["phase"] = "pretrain";
            j["loss"] = loss_value;
            j["loss_ma50"] = window_sum / static_cast<double>(window.size());
            j["grad_norm"] = std::sqrt(grad_sq);
            metrics.write(j);
        }
    }
    metrics.flush();

    Checkpoint ckpt;
    ckpt.seed = cfg.seed;
    ckpt.task_hash = cfg.task.hash();
    ckpt.model_steps = theta.store.step_counter;
    ckpt.config_text = cfg.to_text();
    ckpt.pack_store("theta.", theta.store);
    checkpoint_save(paths.checkpoint(), ckpt);

    manifest.finalize();
    PretrainResult result;
    result.final_loss_ma = window_sum / static_cast<double>(window.size());
    result.paths = paths;
    return result;
}

TrainRunResult cmd_train(const Config& cfg, const std::string& mode,
                         const std::filesystem::path& init_checkpoint,
                         const std::filesystem::path& out_dir) {
    if (mode != "naive" && mode != "co-joint" && mode != "co-alternating") {
        throw ConfigError("train: unknown mode '" + mode + "'");
    }
    if (!std::filesystem::exists(init_checkpoint)) {
        throw PreconditionError("train: pretrained checkpoint not found: " +
                                init_checkpoint.string());
    }
    Checkpoint init = checkpoint_load(init_checkpoint);
    verify_task_hash(init, cfg.task.hash());

    RunPaths paths = prepare_run_dir(out_dir, cfg);
    Manifest manifest(paths, "train:" + mode, cfg);
    manifest.declare(paths.config_snapshot());
    manifest.declare(paths.reference_config());
    manifest.declare(paths.patterns());
    manifest.declare(paths.metrics());
    manifest.declare(paths.checkpoint());
    manifest.start();

    MetricsWriter metrics(paths.metrics());

    RngState root(cfg.seed);
    // Fork order is fixed across modes so they share the rollout streams.
    RngState policy_init_rng = root.fork("policy-init");
    RngState train_rng = root.fork("train");

    DenoiserParams theta = DenoiserParams::zeros(cfg.denoiser_config());
    init.unpack_store("theta.", theta.store);
    // Fresh optimizer state for the reinforcement phase.
    for (std::size_t i = 0; i < theta.store.count(); ++i) {
        theta.store.entry(i).m.fill(0.0);
        theta.store.entry(i).v.fill(0.0);
    }
    theta.store.step_counter = 0;

    SchedulePolicyParams phi(cfg.policy_config(), policy_init_rng);

    UpdateHook hook = [&metrics](const UpdateStats& s, const DenoiserParams&,
                                 const SchedulePolicyParams*) {
        metrics.write(update_record(s));
    };

    TrainRunResult result;
    if (mode == "naive") {
        PresetSchedule preset = make_preset(cfg.schedule_preset, cfg.train.horizon);
        result.train = naive_train(cfg.train, theta, preset, cfg.task, cfg.rewards, train_rng,
                                   hook);
    } else if (mode == "co-alternating") {
        result.train = alternating_train(cfg.train, theta, phi, cfg.task, cfg.rewards,
                                         train_rng, hook);
    } else {
        result.train = joint_train(cfg.train, theta, phi, cfg.task, cfg.rewards, train_rng,
                                   hook);
    }
    metrics.flush();

    Checkpoint ckpt;
    ckpt.seed = cfg.seed;
    ckpt.task_hash = cfg.task.hash();
    ckpt.model_steps = theta.store.step_counter;
    ckpt.updates_done = result.train.history.size();
    ckpt.config_text = cfg.to_text();
    ckpt.pack_store("theta.", theta.store);
    if (mode != "naive") {
        ckpt.schedule_steps = phi.store.step_counter;
        ckpt.pack_store("phi.", phi.store);
    }
    checkpoint_save(paths.checkpoint(), ckpt);

    manifest.finalize();
    result.paths = paths;
    return result;
}

std::string EvalReport::to_json() const {
    json j;
    j["steps"] = steps;
    j["sigma"] = sigma;
    j["schedule_source"] = schedule_source;
    j["interpolated"] = interpolated;
    j["n"] = n;
    auto put = [](const RewardStats& s) {
        return json{{"mean", s.mean}, {"std", s.stddev}, {"n", s.n}};
    };
    j["match"] = put(match);
    j["smooth"] = put(smooth);
    j["composite"] = put(composite);
    j["composite_seen"] = put(composite_seen);
    j["composite_held_out"] = put(composite_held_out);
    json per = json::array();
    for (const RewardStats& s : per_condition) per.push_back(put(s));
    j["per_condition"] = std::move(per);
    return j.dump(2) + "\n";
}

EvalReport cmd_eval(const std::filesystem::path& checkpoint_path, const EvalOptions& opts,
                    const std::filesystem::path& out_dir) {
    LoadedCheckpoint loaded = load_model_checkpoint(checkpoint_path);
    Config cfg = loaded.cfg;

    int steps = opts.steps > 0 ? opts.steps : cfg.train.horizon;
    if (steps < 1) throw ConfigError("eval: steps must be >= 1");
    int num_conditions =
        opts.num_conditions > 0 ? opts.num_conditions : cfg.task.num_conditions;
    if (num_conditions > cfg.task.num_conditions) {
        throw ConfigError("eval: more conditions requested than the task defines");
    }
    int samples = opts.samples_per_condition > 0 ? opts.samples_per_condition
                                                 : cfg.eval_samples_per_condition;
    double sigma = opts.sigma;

    std::string source_name = opts.schedule;
    if (source_name.empty()) source_name = loaded.phi ? "policy" : cfg.schedule_preset;

    std::unique_ptr<ScheduleSource> source;
    bool interpolated = false;
    if (source_name == "policy") {
        if (!loaded.phi) {
            throw PreconditionError("eval: checkpoint has no schedule policy");
        }
        loaded.phi->config.sigma = sigma > 0.0 ? sigma : loaded.phi->config.sigma;
        auto learned = std::make_unique<LearnedScheduleSource>(*loaded.phi, steps, sigma);
        interpolated = learned->interpolated();
        source = std::move(learned);
    } else {
        source = std::make_unique<PresetScheduleSource>(make_preset(source_name, steps));
    }

    RunPaths paths = prepare_run_dir(out_dir, cfg);
    Manifest manifest(paths, "eval", cfg);
    manifest.declare(paths.config_snapshot());
    manifest.declare(paths.reference_config());
    manifest.declare(paths.patterns());
    manifest.declare(paths.report());
    manifest.declare(paths.rollouts());
    manifest.start();

    std::ofstream rollouts(paths.rollouts(), std::ios::trunc);
    if (!rollouts) throw IoError("cannot write " + paths.rollouts().string());

    RngState root(cfg.seed);
    RngState eval_rng = root.fork("eval");

    EvalReport report;
    report.steps = steps;
    report.sigma = sigma;
    report.schedule_source = source_name;
    report.interpolated = interpolated;

    std::vector<double> all_match, all_smooth, all_composite, seen, held_out;
    for (int c = 0; c < num_conditions; ++c) {
        std::vector<double> cond_composite;
        for (int s = 0; s < samples; ++s) {
            RngState traj_rng = eval_rng.fork("eval-traj");
            Trajectory traj = generate_trajectory(loaded.theta, *source, Condition::of(c),
                                                  steps, traj_rng);
            double m = reward_match(traj.final_seq, Condition::of(c), cfg.task);
            double sm = reward_smooth(traj.final_seq);
            traj.reward = composite_reward(traj.final_seq, Condition::of(c), cfg.task,
                                           cfg.rewards);
            all_match.push_back(m);
            all_smooth.push_back(sm);
            all_composite.push_back(traj.reward);
            cond_composite.push_back(traj.reward);
            (c < cfg.task.train_conditions ? seen : held_out).push_back(traj.reward);
            rollouts << trajectory_to_json(traj) << "\n";
        }
        report.per_condition.push_back(stats_of(cond_composite));
    }
    report.n = static_cast<int>(all_composite.size());
    report.match = stats_of(all_match);
    report.smooth = stats_of(all_smooth);
    report.composite = stats_of(all_composite);
    report.composite_seen = stats_of(seen);
    report.composite_held_out = stats_of(held_out);

    write_file(paths.report(), report.to_json());
    rollouts.flush();
    manifest.finalize();
    return report;
}

std::vector<SweepCell> cmd_sweep_gamma(const std::filesystem::path& checkpoint_path,
                                       const std::vector<double>& gammas,
                                       const std::vector<int>& steps,
                                       const std::filesystem::path& out_dir,
                                       std::optional<int> samples_per_cell) {
    if (gammas.empty() || steps.empty()) {
        throw ConfigError("sweep-gamma: gamma and step lists must be non-empty");
    }
    LoadedCheckpoint loaded = load_model_checkpoint(checkpoint_path);
    Config cfg = loaded.cfg;
    int n = samples_per_cell.value_or(cfg.sweep_samples_per_cell);
    if (n < 2) throw ConfigError("sweep-gamma: need at least 2 samples per cell");

    RunPaths paths = prepare_run_dir(out_dir, cfg);
    Manifest manifest(paths, "sweep-gamma", cfg);
    manifest.declare(paths.config_snapshot());
    manifest.declare(paths.reference_config());
    manifest.declare(paths.patterns());
    manifest.declare(paths.sweep_csv());
    manifest.start();

    RngState root(cfg.seed);
    RngState sweep_rng = root.fork("sweep");

    std::vector<SweepCell> cells;
    std::string csv = "gamma,steps,reward_mean,reward_std,n\n";
    for (double gamma : gammas) {
        for (int T : steps) {
            PresetScheduleSource source(preset_cosine_gamma(T, gamma));
            RngState cell_rng = sweep_rng.fork("cell");
            std::vector<double> rewards;
            for (int i = 0; i < n; ++i) {
                auto cond = Condition::of(i % cfg.task.num_conditions);
                RngState traj_rng = cell_rng.fork("traj");
                Trajectory traj =
                    generate_trajectory(loaded.theta, source, cond, T, traj_rng);
                rewards.push_back(
                    composite_reward(traj.final_seq, cond, cfg.task, cfg.rewards));
            }
            SweepCell cell;
            cell.gamma = gamma;
            cell.steps = T;
            cell.composite = stats_of(rewards);
            cells.push_back(cell);
            char row[128];
            std::snprintf(row, sizeof(row), "%.6g,%d,%.6f,%.6f,%d\n", gamma, T,
                          cell.composite.mean, cell.composite.stddev, n);
            csv += row;
        }
    }
    write_file(paths.sweep_csv(), csv);
    manifest.finalize();
    return cells;
}

} // namespace mdmrl
