#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "copo/commands.hpp"
#include "copo/config.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    double alpha = 0.0;
    std::vector<std::string> sets;
};

void add_common(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config_path, "key=value config file");
    sub->add_option("--seed", f.seed, "run seed");
    sub->add_option("--out", f.out_dir, "output directory");
    sub->add_option("--alpha", f.alpha, "exploration factor (copo.alpha)");
    sub->add_option("--set", f.sets, "override one field, key=value (repeatable)")->take_all();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"copo_lab: count-based online preference optimization on synthetic bandits"};
    app.require_subcommand(1);
    CommonFlags flags;
    struct Cmd {
        const char* name;
        const char* help;
        int (*fn)(const copo::ExperimentConfig&, std::ostream&, std::ostream&);
    };
    const Cmd cmds[] = {
        {"run-copo", "iterative COPO with a count-based bonus", copo::cmd_run_copo},
        {"run-regret", "online optimistic RLHF regret experiment", copo::cmd_run_regret},
        {"cfn-demo", "train a coin-flip network on a fixed visit schedule", copo::cmd_cfn_demo},
        {"sweep-alpha", "run-copo for every value of loop.sweep_alphas", copo::cmd_sweep_alpha},
    };
    std::vector<CLI::App*> subs;
    for (const auto& c : cmds) {
        auto* sub = app.add_subcommand(c.name, c.help);
        add_common(sub, flags);
        subs.push_back(sub);
    }
    CLI11_PARSE(app, argc, argv);

    for (std::size_t i = 0; i < subs.size(); ++i) {
        auto* sub = subs[i];
        if (!sub->parsed()) continue;
        copo::Overrides overrides;
        overrides.assignments = flags.sets;
        if (sub->count("--alpha")) overrides.alpha = flags.alpha;
        if (sub->count("--seed")) overrides.seed = flags.seed;
        if (sub->count("--out")) overrides.out_dir = flags.out_dir;
        std::optional<std::filesystem::path> path;
        if (sub->count("--config")) path = flags.config_path;
        copo::ExperimentConfig config;
        try {
            config = copo::resolve_config(path, overrides);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return copo::kExitRuntime;
        }
        return cmds[i].fn(config, std::cout, std::cerr);
    }
    return copo::kExitRuntime;
}
