#include "copo/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "copo/kernels.hpp"

namespace copo {

namespace fs = std::filesystem;

namespace {

class OutputDirError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

void prepare_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw OutputDirError("cannot create output directory " + dir.string());
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw OutputDirError("cannot write " + path.string());
    out << content;
    out.close();
    if (!out) throw OutputDirError("failed writing " + path.string());
}

// Output dir first so an unwritable location fails before any work is done.
fs::path begin_output(const ExperimentConfig& config, const std::string& title) {
    const fs::path dir(config.out_dir);
    prepare_dir(dir);
    write_file(dir / kResolvedConfigFile, to_config_text(config));
    write_file(dir / kPlotScriptFile, plot_script(title));
    return dir;
}

template <typename F>
int guarded(std::ostream& err, F body) {
    try {
        body();
        return kExitOk;
    } catch (const OutputDirError& e) {
        err << "error: " << e.what() << "\n";
        return kExitOutputDir;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

void write_copo_run(const fs::path& dir, const CopoRun& run) {
    write_file(dir / kResultsFile, copo_results_csv(run.reports));
    std::ofstream ckpt(dir / kCheckpointFile, std::ios::trunc);
    if (!ckpt) throw OutputDirError("cannot write " + (dir / kCheckpointFile).string());
    save_checkpoint(*run.cfn, ckpt);
}

}  // namespace

CopoRun run_copo_experiment(const ExperimentConfig& config) {
    config.validate();
    const BanditEnv env = build_env(config.env);
    const Policy pi_sft = Policy::uniform(env.num_prompts(), env.num_responses());
    Rng rng(config.seed);
    Rng data_rng = rng.split(10);
    const auto seed = make_seed_dataset(env, config.iterations * config.prompts_per_iter, config.env.coverage, data_rng);
    return run_copo(env, pi_sft, loop_config(config), seed, rng);
}

RegretReport run_regret_from_config(const ExperimentConfig& config) {
    config.validate();
    const BanditEnv env = build_env(config.env);
    const Policy pi_ref = Policy::uniform(env.num_prompts(), env.num_responses());
    Rng rng(config.seed);
    return run_regret_experiment(env, pi_ref, regret_config(config), rng);
}

std::string copo_results_csv(const std::vector<IterationReport>& reports) {
    std::string out = std::string(kCopoCsvHeader) + "\n";
    for (const auto& r : reports) {
        out += std::to_string(r.t) + "," + std::to_string(r.dataset_size) + "," + num(r.dpo_loss) + "," +
               num(r.mean_bonus) + "," + num(r.true_value) + "," + num(r.subopt_gap) + "," + num(r.wall_ms) + "\n";
    }
    return out;
}

std::string regret_results_csv(const RegretReport& report) {
    std::string out = std::string(kRegretCsvHeader) + "\n";
    for (std::size_t i = 0; i < report.instant.size(); ++i) {
        out += std::to_string(i + 1) + "," + std::to_string(report.dataset_size[i]) + "," + num(report.instant[i]) +
               "," + num(report.cumulative[i]) + "," + num(report.xi[i]) + "," + num(report.ucb_term[i]) + "," +
               num(report.wall_ms[i]) + "\n";
    }
    return out;
}

std::string plot_script(const std::string& title, const std::string& csv_name) {
    return R"PY(#!/usr/bin/env python3
# Plots every CSV column against the first one.
# usage: python3 plot.py [csv] [out.png]
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
src = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, ")PY" + csv_name + R"PY(")
dst = sys.argv[2] if len(sys.argv) > 2 else os.path.join(here, "plot.png")
with open(src, newline="") as fh:
    rows = list(csv.reader(fh))
header, data = rows[0], [[float(v) for v in r] for r in rows[1:]]
cols = header[1:]
fig, axes = plt.subplots(len(cols), 1, figsize=(6, 2.2 * len(cols)), sharex=True, squeeze=False)
for i, name in enumerate(cols):
    ax = axes[i][0]
    ax.plot([r[0] for r in data], [r[i + 1] for r in data], marker=".")
    ax.set_ylabel(name)
axes[-1][0].set_xlabel(header[0])
fig.suptitle(")PY" + title + R"PY(")
fig.tight_layout()
fig.savefig(dst)
print("wrote", dst)
)PY";
}

std::string sweep_run_name(double alpha) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "run_alpha_%g", alpha);
    return buf;
}

int cmd_run_copo(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const fs::path dir = begin_output(config, "COPO run");
        const CopoRun run = run_copo_experiment(config);
        write_copo_run(dir, run);
        const auto& last = run.reports.back();
        out << "run-copo: " << run.reports.size() << " iterations, final true value " << num(last.true_value)
            << ", gap " << num(last.subopt_gap) << " -> " << dir.string() << "\n";
    });
}

int cmd_run_regret(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const fs::path dir = begin_output(config, "Online optimistic RLHF regret");
        const RegretReport report = run_regret_from_config(config);
        write_file(dir / kResultsFile, regret_results_csv(report));
        out << "run-regret: T=" << report.instant.size() << " Regret(T)=" << num(report.cumulative.back())
            << " slope=" << num(report.slope) << " iota=" << num(report.iota)
            << " skipped=" << report.skipped_rounds << " -> " << dir.string() << "\n";
    });
}

int cmd_cfn_demo(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const fs::path dir = begin_output(config, "Coin-flip network pseudocounts");
        const BanditEnv env = build_env(config.env);
        const int nx = env.num_prompts();
        const int ny = env.num_responses();
        const int states = nx * ny;
        // Visit counts spread geometrically over 1..demo_max_count.
        std::vector<int> counts(static_cast<std::size_t>(states));
        for (int s = 0; s < states; ++s) {
            const double frac = states > 1 ? static_cast<double>(s) / (states - 1) : 0.0;
            counts[static_cast<std::size_t>(s)] =
                std::max(1, static_cast<int>(std::lround(std::pow(config.demo_max_count, frac))));
        }
        std::vector<PromptId> xs;
        std::vector<ResponseId> ys;
        for (int s = 0; s < states; ++s) {
            for (int k = 0; k < counts[static_cast<std::size_t>(s)]; ++k) {
                xs.push_back(s / ny);
                ys.push_back(s % ny);
            }
        }
        Rng rng(config.seed);
        Rng label_rng = rng.split(1);
        Rng net_rng = rng.split(2);
        Rng train_rng = rng.split(3);
        const CfnDataset data = build_cfn_dataset(xs, ys, env.features, config.d_coin, label_rng);
        CfnArchitecture arch;
        arch.d_state = env.features.dim();
        arch.hidden = config.hidden;
        arch.d_coin = config.d_coin;
        CoinFlipNet net(arch, net_rng);
        CfnTrainOptions opts;
        opts.epochs = config.demo_epochs;
        opts.learning_rate = config.demo_lr;
        opts.momentum = config.cfn_momentum;
        opts.batch_size = config.cfn_batch_size;
        const CfnTrace trace = cfn_train(net, data, opts, train_rng);

        std::string csv = std::string(kCfnDemoCsvHeader) + "\n";
        for (int s = 0; s < states; ++s) {
            const Vector phi = env.features.phi(s / ny, s % ny);
            csv += std::to_string(s) + "," + std::to_string(s / ny) + "," + std::to_string(s % ny) + "," +
                   std::to_string(counts[static_cast<std::size_t>(s)]) + "," + num(cfn_pseudocount(net, phi)) + "," +
                   num(cfn_bonus(net, phi)) + "\n";
        }
        write_file(dir / kResultsFile, csv);
        std::ofstream ckpt(dir / kCheckpointFile, std::ios::trunc);
        if (!ckpt) throw OutputDirError("cannot write " + (dir / kCheckpointFile).string());
        save_checkpoint(net, ckpt);
        out << "cfn-demo: " << states << " states, " << data.size() << " examples, loss "
            << num(trace.initial_loss) << " -> " << num(trace.epoch_loss.empty() ? trace.initial_loss
                                                                                 : trace.epoch_loss.back())
            << " -> " << dir.string() << "\n";
    });
}

int cmd_sweep_alpha(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const fs::path root(config.out_dir);
        prepare_dir(root);
        write_file(root / kResolvedConfigFile, to_config_text(config));
        write_file(root / kPlotScriptFile, plot_script("Exploration factor sweep", kSummaryFile));

        const auto cells = static_cast<int>(config.sweep_alphas.size());
        std::vector<ExperimentConfig> configs(config.sweep_alphas.size(), config);
        std::vector<IterationReport> finals(config.sweep_alphas.size());
        std::vector<std::string> errors(config.sweep_alphas.size());
        std::vector<int> codes(config.sweep_alphas.size(), kExitOk);
        for (int i = 0; i < cells; ++i) {
            auto& c = configs[static_cast<std::size_t>(i)];
            c.alpha = config.sweep_alphas[static_cast<std::size_t>(i)];
            c.out_dir = (root / sweep_run_name(c.alpha)).string();
        }
        // Cells share nothing mutable and write only inside their own directory.
#pragma omp parallel for schedule(dynamic) num_threads(kernels::max_threads())
        for (int i = 0; i < cells; ++i) {
            const auto k = static_cast<std::size_t>(i);
            try {
                const fs::path dir = begin_output(configs[k], "COPO run");
                const CopoRun run = run_copo_experiment(configs[k]);
                write_copo_run(dir, run);
                finals[k] = run.reports.back();
            } catch (const OutputDirError& e) {
                codes[k] = kExitOutputDir;
                errors[k] = e.what();
            } catch (const std::exception& e) {
                codes[k] = kExitRuntime;
                errors[k] = e.what();
            }
        }
        for (std::size_t k = 0; k < errors.size(); ++k) {
            if (codes[k] == kExitOutputDir) throw OutputDirError(errors[k]);
            if (codes[k] != kExitOk) throw std::runtime_error(sweep_run_name(configs[k].alpha) + ": " + errors[k]);
        }
        std::string csv = "alpha,final_true_value,final_subopt_gap,final_mean_bonus\n";
        for (std::size_t k = 0; k < finals.size(); ++k) {
            csv += num(configs[k].alpha) + "," + num(finals[k].true_value) + "," + num(finals[k].subopt_gap) + "," +
                   num(finals[k].mean_bonus) + "\n";
        }
        write_file(root / kSummaryFile, csv);
        out << "sweep-alpha: " << cells << " runs -> " << root.string() << "\n";
    });
}

}  // namespace copo
