#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "copo/core.hpp"
#include "copo/loop.hpp"

namespace copo {

// Thrown for malformed input, unknown keys or out-of-range values. The
// message names the offending field (and line, for files).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EnvSpec {
    FeatureKind kind = FeatureKind::Tabular;
    int num_prompts = 3;
    int num_responses = 4;
    int d_feat = 8;  // linear kind only
    double bound = 1.0;
    double theta_norm = 1.0;
    std::uint64_t theta_seed = 7;
    double coverage = 0.4;  // share of responses per prompt in the seed data
};

struct ExperimentConfig {
    EnvSpec env;

    // copo.*
    double alpha = 0.1;
    double beta = 0.1;
    double lambda_bonus = 0.01;
    double lambda_theory = 4.0;
    double C = 1.0;
    double delta = 0.1;
    BonusSource bonus_source = BonusSource::Cfn;
    OptimisticMode regret_mode = OptimisticMode::PointwiseBonus;
    double ascent_step = 0.1;
    int ascent_max_steps = 2000;
    double ascent_tolerance = 1e-8;

    // cfn.*
    int d_coin = 20;
    std::vector<int> hidden = {32};
    double cfn_lr = 1e-4;
    double cfn_momentum = 0.9;
    int cfn_epochs = 1;
    int cfn_batch_size = 32;
    bool cfn_reset = false;
    // cfn-demo trains to convergence on a fixed visit schedule (states are
    // visited 1..demo_max_count times), so it has its own budget.
    int demo_max_count = 100;
    int demo_epochs = 300;
    double demo_lr = 0.01;

    // loop.*
    int iterations = 3;
    int prompts_per_iter = 16;
    double rank_noise = 0.0;
    bool moving_anchor = true;
    int regret_T = 2000;
    int pairs_per_iter = 1;
    bool record_wall_time = false;
    std::vector<double> sweep_alphas = {0.01, 0.1, 0.5};
    std::uint64_t seed = 0;
    std::string out_dir = "out";

    void validate() const;
};

// Applies one key=value assignment. Throws ConfigError naming the key.
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);

// Flat key=value text; '#' starts a comment, blank lines are ignored.
// `origin` prefixes diagnostics, e.g. "exp.cfg:12: ...".
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>",
                                   ExperimentConfig base = {});
ExperimentConfig parse_config_file(const std::filesystem::path& path, ExperimentConfig base = {});

struct Overrides {
    std::vector<std::string> assignments;  // "key=value", applied in order
    std::optional<double> alpha;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
};

// Defaults, then the file (if any), then the overrides; validated.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& path, const Overrides& overrides);

// Every key in a fixed order; parsing the output reproduces the config.
std::string to_config_text(const ExperimentConfig& config);

std::vector<std::string> config_keys();

BanditEnv build_env(const EnvSpec& spec);
LoopConfig loop_config(const ExperimentConfig& config);
RegretConfig regret_config(const ExperimentConfig& config);

}  // namespace copo
