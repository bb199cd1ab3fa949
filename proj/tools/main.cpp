#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mdmrl/config.hpp"
#include "mdmrl/errors.hpp"
#include "mdmrl/harness.hpp"

namespace {

using namespace mdmrl;

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    return out;
}

Config load_config(const std::string& config_path, std::optional<std::uint64_t> seed) {
    Config cfg = config_path.empty() ? Config::defaults() : Config::from_file(config_path);
    if (seed) {
        cfg.seed = *seed;
        cfg.validate();
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-diffusion generation and schedule-aware GRPO post-training"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "runs/out";
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "configuration file (key = value lines)");
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out_dir, "output directory");

    auto* pretrain = app.add_subcommand("pretrain", "train the denoiser on the masked objective");

    auto* train = app.add_subcommand("train", "reinforcement post-training");
    std::string mode = "naive";
    std::string init_ckpt;
    train->add_option("--mode", mode, "naive | co-joint | co-alternating")->required();
    train->add_option("--init", init_ckpt, "pretrained checkpoint path")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt;
    EvalOptions eopts;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")->required();
    eval->add_option("--steps", eopts.steps, "generation steps (default: training horizon)");
    eval->add_option("--sigma", eopts.sigma, "schedule stddev at evaluation");
    eval->add_option("--schedule", eopts.schedule,
                     "policy | table1 | cosine | cosine_gamma:<g>");
    eval->add_option("--num-conditions", eopts.num_conditions, "conditions to evaluate");
    eval->add_option("--samples", eopts.samples_per_condition, "samples per condition");

    auto* sweep = app.add_subcommand("sweep-gamma", "reward sweep over remask-curve exponents");
    std::string sweep_ckpt;
    std::string gammas_csv = "1.0,1.5,2.0";
    std::string steps_csv = "16,48";
    sweep->add_option("--checkpoint", sweep_ckpt, "pretrained checkpoint")->required();
    sweep->add_option("--gammas", gammas_csv, "comma-separated gamma list");
    sweep->add_option("--steps", steps_csv, "comma-separated step counts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (pretrain->parsed()) {
            Config cfg = load_config(config_path, seed);
            PretrainResult r = cmd_pretrain(cfg, out_dir);
            std::printf("pretrain done: final loss (ma50) %.4f -> %s\n", r.final_loss_ma,
                        r.paths.checkpoint().string().c_str());
        } else if (train->parsed()) {
            Config cfg = load_config(config_path, seed);
            TrainRunResult r = cmd_train(cfg, mode, init_ckpt, out_dir);
            double final_reward =
                r.train.history.empty() ? 0.0 : r.train.history.back().mean_reward;
            std::printf("train[%s] done: %zu updates, %llu trajectories, last reward %.4f\n",
                        mode.c_str(), r.train.history.size(),
                        static_cast<unsigned long long>(r.train.env_trajectories),
                        final_reward);
        } else if (eval->parsed()) {
            EvalReport r = cmd_eval(eval_ckpt, eopts, out_dir);
            std::printf("eval done: steps %d, composite %.4f +/- %.4f over %d samples%s\n",
                        r.steps, r.composite.mean, r.composite.stddev, r.n,
                        r.interpolated ? " (interpolated schedule)" : "");
        } else if (sweep->parsed()) {
            auto cells = cmd_sweep_gamma(sweep_ckpt, parse_double_list(gammas_csv),
                                         parse_int_list(steps_csv), out_dir);
            for (const SweepCell& c : cells) {
                std::printf("gamma %.3g steps %d: %.4f +/- %.4f\n", c.gamma, c.steps,
                            c.composite.mean, c.composite.stddev);
            }
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const PreconditionError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
