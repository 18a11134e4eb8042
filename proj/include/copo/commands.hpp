#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "copo/config.hpp"
#include "copo/loop.hpp"

namespace copo {

// Exit statuses of the cmd_* entry points.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitOutputDir = 2;

inline constexpr const char* kResultsFile = "results.csv";
inline constexpr const char* kResolvedConfigFile = "config_resolved.txt";
inline constexpr const char* kPlotScriptFile = "plot.py";
inline constexpr const char* kCheckpointFile = "cfn.ckpt";
inline constexpr const char* kSummaryFile = "summary.csv";

inline constexpr const char* kCopoCsvHeader = "t,dataset_size,dpo_loss,mean_bonus,true_value,subopt_gap,wall_ms";
inline constexpr const char* kRegretCsvHeader =
    "t,dataset_size,instant_regret,cumulative_regret,xi,ucb_term,wall_ms";
inline constexpr const char* kCfnDemoCsvHeader = "state,x,y,count,pseudocount,bonus";

// The pieces the commands are made of, usable without touching the disk.
CopoRun run_copo_experiment(const ExperimentConfig& config);
RegretReport run_regret_from_config(const ExperimentConfig& config);

std::string copo_results_csv(const std::vector<IterationReport>& reports);
std::string regret_results_csv(const RegretReport& report);
std::string plot_script(const std::string& title, const std::string& csv_name = kResultsFile);

// Directory name for one sweep cell, e.g. run_alpha_0.1
std::string sweep_run_name(double alpha);

// Each writes its artifacts into config.out_dir and returns an exit status;
// diagnostics go to `err`.
int cmd_run_copo(const ExperimentConfig& config, std::ostream& out, std::ostream& err);
int cmd_run_regret(const ExperimentConfig& config, std::ostream& out, std::ostream& err);
int cmd_cfn_demo(const ExperimentConfig& config, std::ostream& out, std::ostream& err);
int cmd_sweep_alpha(const ExperimentConfig& config, std::ostream& out, std::ostream& err);

}  // namespace copo
