#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "copo/core.hpp"
#include "copo/counting.hpp"
#include "copo/env.hpp"
#include "copo/policy.hpp"
#include "copo/reward.hpp"

namespace copo {

// Optimal KL-regularized policy under the true reward and its value.
struct Comparator {
    Policy pi_star;
    double value = 0.0;
    double beta = 0.0;
    Policy pi_ref;

    Comparator(const BanditEnv& env, const Policy& pi_ref, double beta);
};

// J*_beta(pi_star) - J*_beta(policy)
double suboptimality(const BanditEnv& env, const Comparator& comparator, const Policy& policy);
double suboptimality(const BanditEnv& env, const Policy& policy, double beta, const Policy& pi_ref);

// Offline preference data with limited coverage: each prompt gets a fixed
// subset of max(2, round(coverage * |Y|)) responses, and every seed pair is
// two distinct members of that subset labeled by the BT model. Prompts are
// drawn from rho.
std::vector<PreferencePair> make_seed_dataset(const BanditEnv& env, int num_pairs, double coverage, Rng& rng);

struct LoopConfig {
    CopoConfig copo;
    int iterations = 3;
    int prompts_per_iter = 16;
    double rank_noise = 0.0;
    // Each iteration's result becomes the next reference policy.
    bool moving_anchor = true;
    AscentOptions ascent;
    CfnArchitecture cfn_arch;  // d_state is taken from the feature map
    CfnTrainOptions cfn_train;
    bool cfn_reset = false;
    bool record_wall_time = false;
};

struct IterationReport {
    int t = 0;
    std::size_t dataset_size = 0;  // preference pairs collected so far
    double dpo_loss = 0.0;
    double mean_bonus = 0.0;
    double true_value = 0.0;
    double subopt_gap = 0.0;
    double wall_ms = 0.0;
    std::size_t skipped_prompts = 0;
    std::size_t cfn_examples = 0;
};

struct CopoRun {
    std::vector<IterationReport> reports;
    Policy final_policy;
    std::optional<CoinFlipNet> cfn;  // always set by run_copo
    // State streams: what the CFN is trained on (prompt, sampled response)
    // and what the objective scores (every (x, y) weighted by pi over D_t).
    std::vector<std::pair<PromptId, ResponseId>> cfn_stream;
    std::vector<PreferenceDataset> iteration_data;
};

// Iterative online preference optimization with a count-based bonus. Each
// iteration takes the next contiguous portion of `seed`, samples one response
// per prompt from the reference policy, keeps the oracle-ranked best and worst
// of {sampled, chosen, rejected}, refreshes the counts (and CFN), maximizes the
// COPO objective from the current policy, and optionally moves the anchor.
// True values are measured against pi_sft.
CopoRun run_copo(const BanditEnv& env, const Policy& pi_sft, const LoopConfig& config,
                 const std::vector<PreferencePair>& seed, Rng& rng);

struct RegretConfig {
    double beta = 0.1;
    int iterations = 2000;
    int pairs_per_iter = 1;
    // The norm-of-expectation objective is convex in the policy and collapses
    // it onto one response per prompt, so i.i.d. pairs from it almost always
    // collide; the count-style pointwise bonus keeps untried responses tied.
    OptimisticMode mode = OptimisticMode::PointwiseBonus;
    ConfidenceParams confidence;  // lambda defaults to 4
    MleOptions mle;
    OptimisticOptions optimizer;
    // Agent is handed theta_star and no optimism.
    bool oracle = false;
    bool record_wall_time = false;
};

struct RegretReport {
    std::vector<double> instant;
    std::vector<double> cumulative;
    std::vector<std::size_t> dataset_size;
    std::vector<double> xi;
    std::vector<double> ucb_term;  // xi * ||E phi||_{(Gram + lambda I)^{-1}}
    std::vector<double> wall_ms;
    double slope = 0.0;  // log cumulative regret vs log t over the second half
    double iota = 0.0;   // log(1 + 4T / (d lambda))
    std::size_t skipped_rounds = 0;
};

// Online optimistic RLHF in the linear setting: each round draws a prompt and
// two distinct responses from the previous policy (up to 100 redraws), labels
// them, refits the MLE, rebuilds the confidence set with the summed Gram
// matrix and maximizes the optimistic value against a fixed reference.
RegretReport run_regret_experiment(const BanditEnv& env, const Policy& pi_ref, const RegretConfig& config, Rng& rng);

// Least-squares slope of log(values[t-1]) against log(t) for t in [first, last].
double fit_loglog_slope(const std::vector<double>& values, std::size_t first, std::size_t last);

struct BoundCheck {
    double gap = 0.0;
    double bound = 0.0;  // 2 xi ||E phi(pi_hat)||_{(Sigma + lambda I)^{-1}}
    double xi = 0.0;
    double estimation_error = 0.0;  // ||theta_hat - theta_star||_{Sigma + lambda I}
    bool confidence_event = false;
};

// Single-shot suboptimality check: n pairs from uniform responses, MLE with
// the averaged covariance, policy maximizing the optimistic value.
BoundCheck check_suboptimality_bound(const BanditEnv& env, const Policy& pi_ref, double beta, int n,
                                     const ConfidenceParams& confidence, OptimisticMode mode, Rng& rng);

}  // namespace copo
