#pragma once

#include <functional>
#include <vector>

#include "copo/core.hpp"
#include "copo/counting.hpp"
#include "copo/reward.hpp"

namespace copo {

enum class BonusSource { ExactCount, Cfn, None };

struct CopoConfig {
    double beta = 0.1;
    double alpha = 0.1;
    double lambda_bonus = 0.01;
    BonusSource bonus_source = BonusSource::ExactCount;

    void validate() const;
};

// Exploration bonus tables of 1/sqrt(N(x, y) + lambda), |X| x |Y|.
Matrix count_bonus_table(const ExactCounter& counter, double lambda);
// N(x, y) replaced by the CFN pseudo-count of phi(x, y).
Matrix cfn_bonus_table(const CoinFlipNet& net, const FeatureMap& features, double lambda);

// pi_ref(y|x) exp(r(x, y) / beta) / Z(r, x), normalized with log-sum-exp.
Policy gibbs_policy(const Matrix& rewards, const Policy& pi_ref, double beta);
// log Z(r, x) per prompt.
Vector log_partition(const Matrix& rewards, const Policy& pi_ref, double beta);

// beta (log pi(y|x) - log pi_ref(y|x))
double implicit_reward(const Policy& policy, const Policy& pi_ref, double beta, PromptId x, ResponseId y);
Matrix implicit_reward_table(const Policy& policy, const Policy& pi_ref, double beta);

// Scalar with its gradient over the |X| x |Y| logits table.
struct LogitObjective {
    double value = 0.0;
    Matrix grad;
};

// -sum log sigmoid(r_hat(x, y_w) - r_hat(x, y_l)) with r_hat the implicit reward.
LogitObjective dpo_loss_and_grad(const Policy& policy, const Policy& pi_ref, double beta,
                                 const PreferenceDataset& dataset);

// E_{x ~ D, y ~ pi}[bonus(x, y)] computed exactly over the response set.
double expected_bonus(const Policy& policy, const PreferenceDataset& dataset, const Matrix& bonus);

// -L_DPO + alpha * E_{x ~ D, y ~ pi}[bonus(x, y)]
double copo_objective(const Policy& policy, const Policy& pi_ref, const CopoConfig& config,
                      const PreferenceDataset& dataset, const Matrix& bonus);
Matrix copo_gradient(const Policy& policy, const Policy& pi_ref, const CopoConfig& config,
                     const PreferenceDataset& dataset, const Matrix& bonus);
LogitObjective copo_value_and_gradient(const Policy& policy, const Policy& pi_ref, const CopoConfig& config,
                                       const PreferenceDataset& dataset, const Matrix& bonus);

// Score-function form of the same gradient: the bonus term is estimated with
// `samples` draws y ~ pi_ref per prompt, importance weighted by
// exp(r_hat / beta). Unbiased for copo_gradient.
Matrix copo_gradient_sampled(const Policy& policy, const Policy& pi_ref, const CopoConfig& config,
                             const PreferenceDataset& dataset, const Matrix& bonus, int samples, Rng& rng);

struct AscentOptions {
    double step = 0.1;
    int max_steps = 2000;
    double tolerance = 1e-8;
};

struct AscentResult {
    Policy policy;
    std::vector<double> trace;  // objective after each accepted step, starting with the initial value
    int steps = 0;
    bool converged = false;
};

// Gradient ascent on logits. A step that would lower the objective is halved
// and retried; accepted steps grow the step by 1.2x.
AscentResult ascend_logits(const std::function<LogitObjective(const Policy&)>& objective, Policy init,
                           const AscentOptions& options);

AscentResult optimize_copo(const Policy& policy, const Policy& pi_ref, const CopoConfig& config,
                           const PreferenceDataset& dataset, const Matrix& bonus, const AscentOptions& options = {});

// J_beta(pi) = sum_x rho(x) sum_y pi(y|x)[r(x, y) - beta log(pi/pi_ref)] with its logit gradient.
LogitObjective kl_objective_and_gradient(const Matrix& rewards, const Vector& rho, const Policy& policy,
                                         double beta, const Policy& pi_ref);

// J_beta under theta_hat plus xi * ||E phi||_{(sigma + lambda I)^{-1}}.
double optimistic_value(const Policy& policy, const RewardEstimate& estimate, double beta, const Policy& pi_ref,
                        const FeatureMap& features, const Vector& rho);
LogitObjective optimistic_value_and_gradient(const Policy& policy, const RewardEstimate& estimate, double beta,
                                             const Policy& pi_ref, const FeatureMap& features, const Vector& rho);

enum class OptimisticMode { ExactNorm, PointwiseBonus };

struct OptimisticOptions {
    int max_steps = 2000;
    double tolerance = 1e-8;
};

// PointwiseBonus: closed-form Gibbs policy on theta_hat^T phi + xi * ||phi||_{(sigma + lambda I)^{-1}}.
// ExactNorm: the norm-of-expectation objective, maximized as a convex function
// of the reward shift v in the confidence ellipsoid via the monotone fixed
// point v <- xi A^-1 mu(Gibbs(theta_hat + v)) / ||mu||. Restarts from the plain
// Gibbs, PointwiseBonus and +/- principal-axis directions; keeps the best.
Policy maximize_optimistic(const RewardEstimate& estimate, double beta, const Policy& pi_ref,
                           const FeatureMap& features, const Vector& rho, OptimisticMode mode,
                           const OptimisticOptions& options = {});

struct UcbEquivalence {
    double norm_form = 0.0;   // E_{rho, pi} ||phi(x, y)||_{(G + lambda I)^{-1}}, G = visit Gram
    double count_form = 0.0;  // E_{rho, pi} 1 / sqrt(N(x, y) + lambda)
};

// Tabular features only.
UcbEquivalence tabular_ucb_equivalence_check(const Policy& policy, const PreferenceDataset& dataset,
                                             const FeatureMap& features, double lambda, const Vector& rho);

}  // namespace copo
