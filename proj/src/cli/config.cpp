#include "copo/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace copo {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

double parse_double(const std::string& key, const std::string& value) {
    double out = 0.0;
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) bad_value(key, value, "a finite number");
    return out;
}

long long parse_integer(const std::string& key, const std::string& value) {
    long long out = 0;
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) bad_value(key, value, "an integer");
    return out;
}

int parse_int(const std::string& key, const std::string& value) {
    const long long v = parse_integer(key, value);
    if (v < -2147483647LL || v > 2147483647LL) bad_value(key, value, "a 32-bit integer");
    return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) bad_value(key, value, "a non-negative integer");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    bad_value(key, value, "true or false");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& key, const std::string& value, F parse_one) {
    std::vector<T> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) bad_value(key, value, "a comma-separated list");
        out.push_back(parse_one(key, item));
    }
    if (out.empty()) bad_value(key, value, "a non-empty comma-separated list");
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
std::string fmt_list(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_floating_point_v<T>)
            out += fmt_double(values[i]);
        else
            out += std::to_string(values[i]);
    }
    return out;
}

const char* kind_name(FeatureKind k) { return k == FeatureKind::Tabular ? "tabular" : "linear"; }

const char* source_name(BonusSource s) {
    switch (s) {
        case BonusSource::ExactCount: return "exact";
        case BonusSource::Cfn: return "cfn";
        case BonusSource::None: return "none";
    }
    return "?";
}

const char* mode_name(OptimisticMode m) { return m == OptimisticMode::ExactNorm ? "exact_norm" : "pointwise"; }

struct Field {
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define COPO_DOUBLE(NAME, MEMBER)                                                                        \
    {NAME, {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_double(k, v); }, \
            [](const ExperimentConfig& c) { return fmt_double(c.MEMBER); }}}
#define COPO_INT(NAME, MEMBER)                                                                           \
    {NAME, {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_int(k, v); }, \
            [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }}}
#define COPO_BOOL(NAME, MEMBER)                                                                          \
    {NAME, {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_bool(k, v); }, \
            [](const ExperimentConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }}}

// Ordered: this is also the order of config_resolved.
const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"env.kind",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v == "tabular")
                  c.env.kind = FeatureKind::Tabular;
              else if (v == "linear")
                  c.env.kind = FeatureKind::Linear;
              else
                  bad_value(k, v, "tabular or linear");
          },
          [](const ExperimentConfig& c) { return std::string(kind_name(c.env.kind)); }}},
        COPO_INT("env.num_prompts", env.num_prompts),
        COPO_INT("env.num_responses", env.num_responses),
        COPO_INT("env.d_feat", env.d_feat),
        COPO_DOUBLE("env.bound", env.bound),
        COPO_DOUBLE("env.theta_norm", env.theta_norm),
        {"env.theta_seed",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.env.theta_seed = parse_u64(k, v); },
          [](const ExperimentConfig& c) { return std::to_string(c.env.theta_seed); }}},
        COPO_DOUBLE("env.coverage", env.coverage),
        COPO_DOUBLE("copo.alpha", alpha),
        COPO_DOUBLE("copo.beta", beta),
        COPO_DOUBLE("copo.lambda_bonus", lambda_bonus),
        COPO_DOUBLE("copo.lambda_theory", lambda_theory),
        COPO_DOUBLE("copo.C", C),
        COPO_DOUBLE("copo.delta", delta),
        {"copo.bonus_source",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v == "exact")
                  c.bonus_source = BonusSource::ExactCount;
              else if (v == "cfn")
                  c.bonus_source = BonusSource::Cfn;
              else if (v == "none")
                  c.bonus_source = BonusSource::None;
              else
                  bad_value(k, v, "exact, cfn or none");
          },
          [](const ExperimentConfig& c) { return std::string(source_name(c.bonus_source)); }}},
        {"copo.regret_mode",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v == "exact_norm")
                  c.regret_mode = OptimisticMode::ExactNorm;
              else if (v == "pointwise")
                  c.regret_mode = OptimisticMode::PointwiseBonus;
              else
                  bad_value(k, v, "exact_norm or pointwise");
          },
          [](const ExperimentConfig& c) { return std::string(mode_name(c.regret_mode)); }}},
        COPO_DOUBLE("copo.ascent_step", ascent_step),
        COPO_INT("copo.ascent_max_steps", ascent_max_steps),
        COPO_DOUBLE("copo.ascent_tolerance", ascent_tolerance),
        COPO_INT("cfn.d_coin", d_coin),
        {"cfn.hidden",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.hidden = v == "none" ? std::vector<int>{} : parse_list<int>(k, v, parse_int);
          },
          [](const ExperimentConfig& c) { return c.hidden.empty() ? std::string("none") : fmt_list(c.hidden); }}},
        COPO_DOUBLE("cfn.lr", cfn_lr),
        COPO_DOUBLE("cfn.momentum", cfn_momentum),
        COPO_INT("cfn.epochs", cfn_epochs),
        COPO_INT("cfn.batch_size", cfn_batch_size),
        COPO_BOOL("cfn.reset", cfn_reset),
        COPO_INT("cfn.demo_max_count", demo_max_count),
        COPO_INT("cfn.demo_epochs", demo_epochs),
        COPO_DOUBLE("cfn.demo_lr", demo_lr),
        COPO_INT("loop.iterations", iterations),
        COPO_INT("loop.prompts_per_iter", prompts_per_iter),
        COPO_DOUBLE("loop.rank_noise", rank_noise),
        COPO_BOOL("loop.moving_anchor", moving_anchor),
        COPO_INT("loop.regret_T", regret_T),
        COPO_INT("loop.pairs_per_iter", pairs_per_iter),
        COPO_BOOL("loop.record_wall_time", record_wall_time),
        {"loop.sweep_alphas",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.sweep_alphas = parse_list<double>(k, v, parse_double);
          },
          [](const ExperimentConfig& c) { return fmt_list(c.sweep_alphas); }}},
        {"loop.seed",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); },
          [](const ExperimentConfig& c) { return std::to_string(c.seed); }}},
        {"loop.out_dir",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v.empty()) bad_value(k, v, "a directory path");
              c.out_dir = v;
          },
          [](const ExperimentConfig& c) { return c.out_dir; }}},
    };
    return table;
}

#undef COPO_DOUBLE
#undef COPO_INT
#undef COPO_BOOL

void require(bool ok, const char* key, const std::string& what) {
    if (!ok) throw ConfigError(std::string(key) + ": " + what);
}

}  // namespace

void ExperimentConfig::validate() const {
    require(env.num_prompts >= 1, "env.num_prompts", "must be >= 1");
    require(env.num_responses >= 2, "env.num_responses", "must be >= 2");
    require(env.d_feat >= 1, "env.d_feat", "must be >= 1");
    require(env.bound > 0.0, "env.bound", "must be > 0");
    require(env.theta_norm >= 0.0 && env.theta_norm <= env.bound, "env.theta_norm", "must lie in [0, env.bound]");
    require(env.coverage > 0.0 && env.coverage <= 1.0, "env.coverage", "must lie in (0, 1]");
    require(alpha >= 0.0, "copo.alpha", "must be >= 0");
    require(beta > 0.0, "copo.beta", "must be > 0");
    require(lambda_bonus > 0.0, "copo.lambda_bonus", "must be > 0");
    require(lambda_theory > 0.0, "copo.lambda_theory", "must be > 0");
    require(C > 0.0, "copo.C", "must be > 0");
    require(delta > 0.0 && delta < 1.0, "copo.delta", "must lie in (0, 1)");
    require(ascent_step > 0.0, "copo.ascent_step", "must be > 0");
    require(ascent_max_steps >= 1, "copo.ascent_max_steps", "must be >= 1");
    require(ascent_tolerance >= 0.0, "copo.ascent_tolerance", "must be >= 0");
    require(d_coin >= 1, "cfn.d_coin", "must be >= 1");
    for (int h : hidden) require(h >= 1, "cfn.hidden", "widths must be >= 1");
    require(cfn_lr > 0.0, "cfn.lr", "must be > 0");
    require(cfn_momentum >= 0.0 && cfn_momentum < 1.0, "cfn.momentum", "must lie in [0, 1)");
    require(cfn_epochs >= 0, "cfn.epochs", "must be >= 0");
    require(cfn_batch_size >= 1, "cfn.batch_size", "must be >= 1");
    require(demo_max_count >= 1, "cfn.demo_max_count", "must be >= 1");
    require(demo_epochs >= 1, "cfn.demo_epochs", "must be >= 1");
    require(demo_lr > 0.0, "cfn.demo_lr", "must be > 0");
    require(iterations >= 1, "loop.iterations", "must be >= 1");
    require(prompts_per_iter >= 1, "loop.prompts_per_iter", "must be >= 1");
    require(rank_noise >= 0.0, "loop.rank_noise", "must be >= 0");
    require(regret_T >= 10, "loop.regret_T", "must be >= 10");
    require(pairs_per_iter >= 1, "loop.pairs_per_iter", "must be >= 1");
    for (double a : sweep_alphas) require(a >= 0.0, "loop.sweep_alphas", "values must be >= 0");
}

void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value) {
    for (const auto& [name, field] : fields()) {
        if (name == key) {
            field.set(config, key, value);
            return;
        }
    }
    throw ConfigError("unknown key '" + key + "'");
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin, ExperimentConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            apply_setting(base, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return base;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path, ExperimentConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path.string(), std::move(base));
}

ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& path, const Overrides& overrides) {
    ExperimentConfig config;
    if (path) config = parse_config_file(*path, config);
    for (const auto& a : overrides.assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos) throw ConfigError("--set: expected key=value, got '" + a + "'");
        try {
            apply_setting(config, trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("--set: ") + e.what());
        }
    }
    if (overrides.alpha) config.alpha = *overrides.alpha;
    if (overrides.seed) config.seed = *overrides.seed;
    if (overrides.out_dir) config.out_dir = *overrides.out_dir;
    config.validate();
    return config;
}

std::string to_config_text(const ExperimentConfig& config) {
    std::string out;
    for (const auto& [name, field] : fields()) out += name + "=" + field.get(config) + "\n";
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.first);
    return keys;
}

BanditEnv build_env(const EnvSpec& spec) {
    Rng rng(spec.theta_seed);
    Rng feature_rng = rng.split(1);
    Rng theta_rng = rng.split(2);
    FeatureMap features = build_feature_map(spec.kind, spec.num_prompts, spec.num_responses, spec.d_feat, feature_rng);
    return random_env(std::move(features), spec.bound, spec.theta_norm, theta_rng);
}

LoopConfig loop_config(const ExperimentConfig& config) {
    LoopConfig out;
    out.copo.beta = config.beta;
    out.copo.alpha = config.alpha;
    out.copo.lambda_bonus = config.lambda_bonus;
    out.copo.bonus_source = config.bonus_source;
    out.iterations = config.iterations;
    out.prompts_per_iter = config.prompts_per_iter;
    out.rank_noise = config.rank_noise;
    out.moving_anchor = config.moving_anchor;
    out.ascent.step = config.ascent_step;
    out.ascent.max_steps = config.ascent_max_steps;
    out.ascent.tolerance = config.ascent_tolerance;
    out.cfn_arch.hidden = config.hidden;
    out.cfn_arch.d_coin = config.d_coin;
    out.cfn_train.epochs = config.cfn_epochs;
    out.cfn_train.learning_rate = config.cfn_lr;
    out.cfn_train.momentum = config.cfn_momentum;
    out.cfn_train.batch_size = config.cfn_batch_size;
    out.cfn_reset = config.cfn_reset;
    out.record_wall_time = config.record_wall_time;
    return out;
}

RegretConfig regret_config(const ExperimentConfig& config) {
    RegretConfig out;
    out.beta = config.beta;
    out.iterations = config.regret_T;
    out.pairs_per_iter = config.pairs_per_iter;
    out.mode = config.regret_mode;
    out.confidence.C = config.C;
    out.confidence.delta = config.delta;
    out.confidence.lambda = config.lambda_theory;
    out.confidence.bound = config.env.bound;
    out.optimizer.max_steps = config.ascent_max_steps;
    out.optimizer.tolerance = config.ascent_tolerance;
    out.record_wall_time = config.record_wall_time;
    return out;
}

}  // namespace copo
