#include "mdmrl/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "mdmrl/errors.hpp"

namespace mdmrl {

namespace {

struct KeyDef {
    std::string key;
    bool required; // must appear in any provided config file
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
    std::string doc;
};

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        std::uint64_t x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad unsigned integer for " + key + ": '" + v + "'");
    }
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        int x = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

// clang-format off
const std::vector<KeyDef>& registry() {
    static const std::vector<KeyDef> defs = [] {
        std::vector<KeyDef> r;
        auto add = [&r](std::string key, bool req,
                        std::function<void(Config&, const std::string&)> set,
                        std::function<std::string(const Config&)> get, std::string doc) {
            r.push_back({std::move(key), req, std::move(set), std::move(get), std::move(doc)});
        };
        add("seed", false,
            [](Config& c, const std::string& v) { c.seed = parse_u64("seed", v); },
            [](const Config& c) { return fmt(c.seed); },
            "experiment seed; --seed overrides");
        add("task.vocab_size", true,
            [](Config& c, const std::string& v) { c.task.vocab_size = parse_int("task.vocab_size", v); },
            [](const Config& c) { return fmt(c.task.vocab_size); },
            "vocabulary size V (tokens are 1..V)");
        add("task.length", true,
            [](Config& c, const std::string& v) { c.task.length = parse_int("task.length", v); },
            [](const Config& c) { return fmt(c.task.length); },
            "sequence length N");
        add("task.num_conditions", true,
            [](Config& c, const std::string& v) { c.task.num_conditions = parse_int("task.num_conditions", v); },
            [](const Config& c) { return fmt(c.task.num_conditions); },
            "number of condition classes C");
        add("task.train_conditions", false,
            [](Config& c, const std::string& v) { c.task.train_conditions = parse_int("task.train_conditions", v); },
            [](const Config& c) { return fmt(c.task.train_conditions); },
            "RL rollouts draw conditions from [0, this); the rest are held out");
        add("task.corruption_rate", true,
            [](Config& c, const std::string& v) { c.task.corruption_rate = parse_double("task.corruption_rate", v); },
            [](const Config& c) { return fmt(c.task.corruption_rate); },
            "per-position corruption probability of pretraining data, in [0, 0.5)");
        add("task.pattern_seed", true,
            [](Config& c, const std::string& v) { c.task.pattern_seed = parse_u64("task.pattern_seed", v); },
            [](const Config& c) { return fmt(c.task.pattern_seed); },
            "seed fixing the per-condition target patterns");
        add("task.min_rough_fraction", false,
            [](Config& c, const std::string& v) { c.task.min_rough_fraction = parse_double("task.min_rough_fraction", v); },
            [](const Config& c) { return fmt(c.task.min_rough_fraction); },
            "minimum fraction of non-smooth adjacent pattern pairs");
        add("reward.match_weight", false,
            [](Config& c, const std::string& v) { c.rewards.components[0].second = parse_double("reward.match_weight", v); },
            [](const Config& c) { return fmt(c.rewards.components[0].second); },
            "weight of the pattern-match reward");
        add("reward.smooth_weight", false,
            [](Config& c, const std::string& v) { c.rewards.components[1].second = parse_double("reward.smooth_weight", v); },
            [](const Config& c) { return fmt(c.rewards.components[1].second); },
            "weight of the smoothness reward; weights must sum to 1");
        add("model.hidden_dim", false,
            [](Config& c, const std::string& v) { c.model_hidden_dim = parse_int("model.hidden_dim", v); },
            [](const Config& c) { return fmt(c.model_hidden_dim); },
            "denoiser hidden width");
        add("model.layers", false,
            [](Config& c, const std::string& v) { c.model_layers = parse_int("model.layers", v); },
            [](const Config& c) { return fmt(c.model_layers); },
            "denoiser mixing layers");
        add("model.time_bins", false,
            [](Config& c, const std::string& v) { c.model_time_bins = parse_int("model.time_bins", v); },
            [](const Config& c) { return fmt(c.model_time_bins); },
            "denoiser timestep-embedding bins over normalized progress");
        add("policy.hidden_dim", false,
            [](Config& c, const std::string& v) { c.policy_hidden_dim = parse_int("policy.hidden_dim", v); },
            [](const Config& c) { return fmt(c.policy_hidden_dim); },
            "schedule-policy hidden width");
        add("policy.time_bins", false,
            [](Config& c, const std::string& v) { c.policy_time_bins = parse_int("policy.time_bins", v); },
            [](const Config& c) { return fmt(c.policy_time_bins); },
            "schedule-policy timestep-embedding bins");
        add("policy.time_dim", false,
            [](Config& c, const std::string& v) { c.policy_time_dim = parse_int("policy.time_dim", v); },
            [](const Config& c) { return fmt(c.policy_time_dim); },
            "schedule-policy timestep-embedding width");
        add("schedule.preset", false,
            [](Config& c, const std::string& v) { c.schedule_preset = v; },
            [](const Config& c) { return c.schedule_preset; },
            "baseline schedule: table1 | cosine | cosine_gamma:<g>");
        add("pretrain.iterations", false,
            [](Config& c, const std::string& v) { c.pretrain_iterations = parse_int("pretrain.iterations", v); },
            [](const Config& c) { return fmt(c.pretrain_iterations); },
            "pretraining gradient steps");
        add("pretrain.batch_size", false,
            [](Config& c, const std::string& v) { c.pretrain_batch_size = parse_int("pretrain.batch_size", v); },
            [](const Config& c) { return fmt(c.pretrain_batch_size); },
            "pretraining batch size");
        add("pretrain.lr", false,
            [](Config& c, const std::string& v) { c.pretrain_lr = parse_double("pretrain.lr", v); },
            [](const Config& c) { return fmt(c.pretrain_lr); },
            "pretraining Adam learning rate");
        add("pretrain.mask_rate_min", false,
            [](Config& c, const std::string& v) { c.pretrain_opts.mask_rate_min = parse_double("pretrain.mask_rate_min", v); },
            [](const Config& c) { return fmt(c.pretrain_opts.mask_rate_min); },
            "lower bound of the per-example mask rate");
        add("pretrain.mask_rate_max", false,
            [](Config& c, const std::string& v) { c.pretrain_opts.mask_rate_max = parse_double("pretrain.mask_rate_max", v); },
            [](const Config& c) { return fmt(c.pretrain_opts.mask_rate_max); },
            "upper bound of the per-example mask rate");
        add("pretrain.cond_dropout", false,
            [](Config& c, const std::string& v) { c.pretrain_opts.cond_dropout = parse_double("pretrain.cond_dropout", v); },
            [](const Config& c) { return fmt(c.pretrain_opts.cond_dropout); },
            "probability of training an example unconditionally");
        add("pretrain.log_every", false,
            [](Config& c, const std::string& v) { c.pretrain_log_every = parse_int("pretrain.log_every", v); },
            [](const Config& c) { return fmt(c.pretrain_log_every); },
            "metric record cadence during pretraining");
        add("train.steps", false,
            [](Config& c, const std::string& v) { c.train.horizon = parse_int("train.steps", v); },
            [](const Config& c) { return fmt(c.train.horizon); },
            "generation steps T");
        add("train.group_size_model", false,
            [](Config& c, const std::string& v) { c.train.group_size_model = parse_int("train.group_size_model", v); },
            [](const Config& c) { return fmt(c.train.group_size_model); },
            "rollout group size G for model-phase updates");
        add("train.group_size_schedule", false,
            [](Config& c, const std::string& v) { c.train.group_size_schedule = parse_int("train.group_size_schedule", v); },
            [](const Config& c) { return fmt(c.train.group_size_schedule); },
            "rollout group size G for schedule-phase updates");
        add("train.groups_per_update", false,
            [](Config& c, const std::string& v) { c.train.groups_per_update = parse_int("train.groups_per_update", v); },
            [](const Config& c) { return fmt(c.train.groups_per_update); },
            "rollout groups collected per update");
        add("train.updates", false,
            [](Config& c, const std::string& v) { c.train.updates = parse_int("train.updates", v); },
            [](const Config& c) { return fmt(c.train.updates); },
            "rollout batches for naive and co-joint modes; budget-matched to "
            "cycles*(N_m*G_m + N_s*G_s)/G_m for co-alternating");
        add("train.cycles", false,
            [](Config& c, const std::string& v) { c.train.cycles = parse_int("train.cycles", v); },
            [](const Config& c) { return fmt(c.train.cycles); },
            "alternating cycles");
        add("train.model_updates_per_cycle", false,
            [](Config& c, const std::string& v) { c.train.model_updates_per_cycle = parse_int("train.model_updates_per_cycle", v); },
            [](const Config& c) { return fmt(c.train.model_updates_per_cycle); },
            "model updates per cycle (N_m)");
        add("train.schedule_updates_per_cycle", false,
            [](Config& c, const std::string& v) { c.train.schedule_updates_per_cycle = parse_int("train.schedule_updates_per_cycle", v); },
            [](const Config& c) { return fmt(c.train.schedule_updates_per_cycle); },
            "schedule updates per cycle (N_s)");
        add("train.epochs_per_rollout", false,
            [](Config& c, const std::string& v) { c.train.epochs_per_rollout = parse_int("train.epochs_per_rollout", v); },
            [](const Config& c) { return fmt(c.train.epochs_per_rollout); },
            "gradient updates reusing one rollout batch (>1 activates the clip)");
        add("train.clip_epsilon", false,
            [](Config& c, const std::string& v) { c.train.clip_epsilon = parse_double("train.clip_epsilon", v); },
            [](const Config& c) { return fmt(c.train.clip_epsilon); },
            "surrogate clip half-width");
        add("train.kl_beta", false,
            [](Config& c, const std::string& v) { c.train.kl_beta = parse_double("train.kl_beta", v); },
            [](const Config& c) { return fmt(c.train.kl_beta); },
            "weight of the reference-model KL penalty (0 disables it)");
        add("train.sigma", false,
            [](Config& c, const std::string& v) { c.train.sigma = parse_double("train.sigma", v); },
            [](const Config& c) { return fmt(c.train.sigma); },
            "schedule-policy exploration stddev in unconstrained space");
        add("train.lr_model", false,
            [](Config& c, const std::string& v) { c.train.lr_model = parse_double("train.lr_model", v); },
            [](const Config& c) { return fmt(c.train.lr_model); },
            "model-phase Adam learning rate");
        add("train.lr_schedule", false,
            [](Config& c, const std::string& v) { c.train.lr_schedule = parse_double("train.lr_schedule", v); },
            [](const Config& c) { return fmt(c.train.lr_schedule); },
            "schedule-phase Adam learning rate");
        add("adam.beta1", false,
            [](Config& c, const std::string& v) { c.train.adam.beta1 = parse_double("adam.beta1", v); },
            [](const Config& c) { return fmt(c.train.adam.beta1); },
            "Adam first-moment decay");
        add("adam.beta2", false,
            [](Config& c, const std::string& v) { c.train.adam.beta2 = parse_double("adam.beta2", v); },
            [](const Config& c) { return fmt(c.train.adam.beta2); },
            "Adam second-moment decay");
        add("adam.eps", false,
            [](Config& c, const std::string& v) { c.train.adam.eps = parse_double("adam.eps", v); },
            [](const Config& c) { return fmt(c.train.adam.eps); },
            "Adam denominator epsilon");
        add("eval.samples_per_condition", false,
            [](Config& c, const std::string& v) { c.eval_samples_per_condition = parse_int("eval.samples_per_condition", v); },
            [](const Config& c) { return fmt(c.eval_samples_per_condition); },
            "evaluation samples per condition");
        add("eval.sigma", false,
            [](Config& c, const std::string& v) { c.eval_sigma = parse_double("eval.sigma", v); },
            [](const Config& c) { return fmt(c.eval_sigma); },
            "schedule-policy stddev at evaluation (0 = deterministic schedule)");
        add("sweep.samples_per_cell", false,
            [](Config& c, const std::string& v) { c.sweep_samples_per_cell = parse_int("sweep.samples_per_cell", v); },
            [](const Config& c) { return fmt(c.sweep_samples_per_cell); },
            "samples per (gamma, steps) cell in sweep-gamma");
        return r;
    }();
    return defs;
}
// clang-format on

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> parse_pairs(const std::string& text) {
    std::map<std::string, std::string> pairs;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: malformed line " + std::to_string(lineno) + ": '" +
                              trim(line) + "'");
        }
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config: empty key on line " + std::to_string(lineno));
        }
        if (pairs.count(key)) throw ConfigError("config: duplicate key " + key);
        pairs[key] = value;
    }
    return pairs;
}

std::string env_name(const std::string& key) {
    std::string out = "MDMRL_";
    for (char c : key) {
        if (c == '.') {
            out += "__";
        } else {
            out += c;
        }
    }
    return out;
}

} // namespace

Config Config::defaults() {
    Config c;
    c.task.build_patterns();
    return c;
}

Config Config::from_text(const std::string& text, bool require_task_block) {
    auto pairs = parse_pairs(text);
    Config c;
    for (const KeyDef& def : registry()) {
        auto it = pairs.find(def.key);
        if (it != pairs.end()) {
            def.set(c, it->second);
            pairs.erase(it);
        } else if (require_task_block && def.required) {
            throw ConfigError("config: missing config field: " + def.key);
        }
        if (const char* env = std::getenv(env_name(def.key).c_str())) {
            def.set(c, env);
        }
    }
    if (!pairs.empty()) {
        throw ConfigError("config: unknown key '" + pairs.begin()->first + "'");
    }
    c.task.build_patterns();
    c.validate();
    return c;
}

Config Config::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str(), true);
}

void Config::validate() const {
    task.validate();
    rewards.validate();
    try {
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (model_hidden_dim < 1 || model_layers < 1 || model_time_bins < 2) {
        throw ConfigError("config: model dimensions out of range");
    }
    if (policy_hidden_dim < 1 || policy_time_bins < 2 || policy_time_dim < 1) {
        throw ConfigError("config: policy dimensions out of range");
    }
    if (pretrain_iterations < 1 || pretrain_batch_size < 1 || pretrain_log_every < 1) {
        throw ConfigError("config: pretrain settings out of range");
    }
    if (!(pretrain_lr > 0.0)) throw ConfigError("config: pretrain.lr must be positive");
    if (!(pretrain_opts.mask_rate_min > 0.0 && pretrain_opts.mask_rate_max <= 1.0 &&
          pretrain_opts.mask_rate_min <= pretrain_opts.mask_rate_max)) {
        throw ConfigError("config: pretrain mask-rate range invalid");
    }
    if (!(pretrain_opts.cond_dropout >= 0.0 && pretrain_opts.cond_dropout < 1.0)) {
        throw ConfigError("config: pretrain.cond_dropout outside [0, 1)");
    }
    if (eval_samples_per_condition < 1) {
        throw ConfigError("config: eval.samples_per_condition must be >= 1");
    }
    if (eval_sigma < 0.0) throw ConfigError("config: eval.sigma must be >= 0");
    if (sweep_samples_per_cell < 2) {
        throw ConfigError("config: sweep.samples_per_cell must be >= 2");
    }
    make_preset(schedule_preset, std::max(train.horizon, 1)); // name check
}

std::string Config::to_text() const {
    std::ostringstream os;
    for (const KeyDef& def : registry()) {
        os << def.key << " = " << def.get(*this) << "\n";
    }
    return os.str();
}

std::string Config::reference_text() {
    Config c = defaults();
    std::ostringstream os;
    os << "# Reference configuration: every key with its default value.\n";
    os << "# Lines are `key = value`; '#' starts a comment.\n";
    os << "# Environment overrides: MDMRL_<key with '.' replaced by '__'>.\n\n";
    for (const KeyDef& def : registry()) {
        os << "# " << def.doc << "\n";
        os << def.key << " = " << def.get(c) << "\n\n";
    }
    return os.str();
}

DenoiserConfig Config::denoiser_config() const {
    DenoiserConfig d;
    d.vocab_size = task.vocab_size;
    d.length = task.length;
    d.num_conditions = task.num_conditions;
    d.hidden_dim = model_hidden_dim;
    d.layers = model_layers;
    d.time_bins = model_time_bins;
    return d;
}

SchedulePolicyConfig Config::policy_config() const {
    SchedulePolicyConfig p;
    p.feature_dim = model_hidden_dim;
    p.hidden_dim = policy_hidden_dim;
    p.time_bins = policy_time_bins;
    p.time_dim = policy_time_dim;
    p.sigma = train.sigma;
    p.horizon = train.horizon;
    p.baseline = schedule_preset;
    return p;
}

} // namespace mdmrl
