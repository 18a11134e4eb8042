#include "copo/policy.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <vector>

#include "copo/env.hpp"

namespace copo {

void CopoConfig::validate() const {
    if (!(beta > 0.0)) throw std::invalid_argument("copo.beta must be positive");
    if (!(alpha >= 0.0)) throw std::invalid_argument("copo.alpha must be non-negative");
    if (!(lambda_bonus >= 0.0)) throw std::invalid_argument("copo.lambda_bonus must be non-negative");
}

Matrix count_bonus_table(const ExactCounter& counter, double lambda) {
    Matrix out(counter.num_prompts(), counter.num_responses());
    for (int x = 0; x < counter.num_prompts(); ++x)
        for (int y = 0; y < counter.num_responses(); ++y)
            out(x, y) = 1.0 / std::sqrt(static_cast<double>(counter.count(x, y)) + lambda);
    return out;
}

Matrix cfn_bonus_table(const CoinFlipNet& net, const FeatureMap& features, double lambda) {
    Matrix out(features.num_prompts(), features.num_responses());
    for (int x = 0; x < features.num_prompts(); ++x)
        for (int y = 0; y < features.num_responses(); ++y)
            out(x, y) = 1.0 / std::sqrt(cfn_pseudocount(net, features.phi(x, y)) + lambda);
    return out;
}

Vector log_partition(const Matrix& rewards, const Policy& pi_ref, double beta) {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
    Vector out(rewards.rows());
    for (int x = 0; x < rewards.rows(); ++x) {
        const Vector scores = pi_ref.log_probabilities(x) + rewards.row(x).transpose() / beta;
        out[x] = log_sum_exp(scores);
    }
    return out;
}

Policy gibbs_policy(const Matrix& rewards, const Policy& pi_ref, double beta) {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
    if (rewards.rows() != pi_ref.num_prompts() || rewards.cols() != pi_ref.num_responses())
        throw std::invalid_argument("reward table and reference policy shapes differ");
    Matrix logits(rewards.rows(), rewards.cols());
    for (int x = 0; x < rewards.rows(); ++x) {
        const Vector scores = pi_ref.log_probabilities(x) + rewards.row(x).transpose() / beta;
        logits.row(x) = (scores.array() - log_sum_exp(scores)).matrix().transpose();
    }
    return Policy(std::move(logits));
}

double implicit_reward(const Policy& policy, const Policy& pi_ref, double beta, PromptId x, ResponseId y) {
    return beta * (policy.log_probabilities(x)[y] - pi_ref.log_probabilities(x)[y]);
}

Matrix implicit_reward_table(const Policy& policy, const Policy& pi_ref, double beta) {
    return beta * (policy.log_probability_table() - pi_ref.log_probability_table());
}

LogitObjective dpo_loss_and_grad(const Policy& policy, const Policy& pi_ref, double beta,
                                 const PreferenceDataset& dataset) {
    if (dataset.empty()) throw std::invalid_argument("DPO loss needs a non-empty dataset");
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
    const Matrix r_hat = implicit_reward_table(policy, pi_ref, beta);
    LogitObjective out{0.0, Matrix::Zero(policy.num_prompts(), policy.num_responses())};
    for (const auto& p : dataset.pairs()) {
        const double margin = r_hat(p.x, p.chosen) - r_hat(p.x, p.rejected);
        out.value -= log_sigmoid(margin);
        // d log pi(y_w) - d log pi(y_l) w.r.t. logits is e_w - e_l; the softmax terms cancel.
        const double coeff = beta * sigmoid(-margin);
        out.grad(p.x, p.chosen) -= coeff;
        out.grad(p.x, p.rejected) += coeff;
    }
    return out;
}

double expected_bonus(const Policy& policy, const PreferenceDataset& dataset, const Matrix& bonus) {
    const Vector w = dataset.prompt_weights();
    double total = 0.0;
    for (int x = 0; x < policy.num_prompts(); ++x) {
        if (w[x] == 0.0) continue;
        total += w[x] * policy.probabilities(x).dot(bonus.row(x).transpose());
    }
    return total;
}

LogitObjective copo_value_and_gradient(const Policy& policy, const Policy& pi_ref, const CopoConfig& config,
                                       const PreferenceDataset& dataset, const Matrix& bonus) {
    config.validate();
    auto dpo = dpo_loss_and_grad(policy, pi_ref, config.beta, dataset);
    LogitObjective out{-dpo.value, -dpo.grad};
    if (config.alpha == 0.0) return out;
    const Vector w = dataset.prompt_weights();
    for (int x = 0; x < policy.num_prompts(); ++x) {
        if (w[x] == 0.0) continue;
        const Vector p = policy.probabilities(x);
        const Vector b = bonus.row(x).transpose();
        const double mean = p.dot(b);
        out.value += config.alpha * w[x] * mean;
        out.grad.row(x) += (config.alpha * w[x] * p.cwiseProduct(b.array().matrix() - Vector::Constant(b.size(), mean)))
                               .transpose();
    }
    return out;
}

double copo_objective(const Policy& policy, const Policy& pi_ref, const CopoConfig& config,
                      const PreferenceDataset& dataset, const Matrix& bonus) {
    return copo_value_and_gradient(policy, pi_ref, config, dataset, bonus).value;
}

Matrix copo_gradient(const Policy& policy, const Policy& pi_ref, const CopoConfig& config,
                     const PreferenceDataset& dataset, const Matrix& bonus) {
    return copo_value_and_gradient(policy, pi_ref, config, dataset, bonus).grad;
}

Matrix copo_gradient_sampled(const Policy& policy, const Policy& pi_ref, const CopoConfig& config,
                             const PreferenceDataset& dataset, const Matrix& bonus, int samples, Rng& rng) {
    config.validate();
    if (samples < 1) throw std::invalid_argument("sampled gradient needs samples >= 1");
    Matrix grad = -dpo_loss_and_grad(policy, pi_ref, config.beta, dataset).grad;
    if (config.alpha == 0.0) return grad;
    const Vector w = dataset.prompt_weights();
    const Matrix r_hat = implicit_reward_table(policy, pi_ref, config.beta);
    for (int x = 0; x < policy.num_prompts(); ++x) {
        if (w[x] == 0.0) continue;
        const Vector p = policy.probabilities(x);
        const Vector ref = pi_ref.probabilities(x);
        for (int s = 0; s < samples; ++s) {
            const int y = rng.categorical(ref);
            const double weight = std::exp(r_hat(x, y) / config.beta) * bonus(x, y);
            // grad of log pi(y|x) w.r.t. the logits row is e_y - pi
            Vector score = -p;
            score[y] += 1.0;
            grad.row(x) += (config.alpha * w[x] * weight / samples) * score.transpose();
        }
    }
    return grad;
}

AscentResult ascend_logits(const std::function<LogitObjective(const Policy&)>& objective, Policy init,
                           const AscentOptions& options) {
    AscentResult result{std::move(init), {}, 0, false};
    LogitObjective current = objective(result.policy);
    result.trace.push_back(current.value);
    double step = options.step;
    while (result.steps < options.max_steps) {
        if (current.grad.norm() < options.tolerance) {
            result.converged = true;
            break;
        }
        bool accepted = false;
        for (int tries = 0; tries < 60; ++tries) {
            Policy candidate(result.policy.logits() + step * current.grad);
            LogitObjective next = objective(candidate);
            if (next.value >= current.value) {
                result.policy = std::move(candidate);
                current = std::move(next);
                accepted = true;
                step *= 1.2;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        ++result.steps;
        result.trace.push_back(current.value);
    }
    if (!result.converged && current.grad.norm() < options.tolerance) result.converged = true;
    return result;
}

AscentResult optimize_copo(const Policy& policy, const Policy& pi_ref, const CopoConfig& config,
                           const PreferenceDataset& dataset, const Matrix& bonus, const AscentOptions& options) {
    config.validate();
    return ascend_logits(
        [&](const Policy& p) { return copo_value_and_gradient(p, pi_ref, config, dataset, bonus); }, policy,
        options);
}

namespace {

// Softmax chain rule: d/dlogits of sum_y pi_y h_y with h held fixed, scaled.
Vector softmax_pullback(const Vector& p, const Vector& h) {
    return p.cwiseProduct(h - Vector::Constant(h.size(), p.dot(h)));
}

}  // namespace

LogitObjective kl_objective_and_gradient(const Matrix& rewards, const Vector& rho, const Policy& policy,
                                         double beta, const Policy& pi_ref) {
    LogitObjective out{0.0, Matrix::Zero(policy.num_prompts(), policy.num_responses())};
    for (int x = 0; x < policy.num_prompts(); ++x) {
        const Vector lp = policy.log_probabilities(x);
        const Vector p = lp.array().exp();
        const Vector h = rewards.row(x).transpose() - beta * (lp - pi_ref.log_probabilities(x));
        out.value += rho[x] * p.dot(h);
        out.grad.row(x) = (rho[x] * softmax_pullback(p, h)).transpose();
    }
    return out;
}

double optimistic_value(const Policy& policy, const RewardEstimate& estimate, double beta, const Policy& pi_ref,
                        const FeatureMap& features, const Vector& rho) {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
    const Matrix r_hat = reward_table(features, estimate.theta_hat.theta);
    const double base = kl_regularized_value(r_hat, rho, policy, beta, pi_ref);
    if (estimate.xi == 0.0) return base;
    return base + estimate.xi * ucb_expectation_norm(policy, features, estimate.sigma, estimate.lambda(), rho);
}

namespace {

struct OptimisticTerms {
    Matrix r_hat;
    Eigen::LLT<Matrix> factor;
};

// Effective per-pair reward r_hat + xi * phi^T A mu / ||mu||_A, the gradient of
// the optimistic value with respect to pi(y|x) / rho(x), minus the KL part.
LogitObjective optimistic_eval(const Policy& policy, const OptimisticTerms& terms, const RewardEstimate& estimate,
                               double beta, const Policy& pi_ref, const FeatureMap& features, const Vector& rho,
                               Matrix* effective_reward) {
    const Vector mu = feature_expectation(policy, features, rho);
    const Vector a_mu = terms.factor.solve(mu);
    const double norm = std::sqrt(std::max(0.0, mu.dot(a_mu)));
    Matrix reward = terms.r_hat;
    if (estimate.xi > 0.0 && norm > 0.0) {
        const Vector lin = features.table() * a_mu * (estimate.xi / norm);
        for (int x = 0; x < features.num_prompts(); ++x)
            for (int y = 0; y < features.num_responses(); ++y) reward(x, y) += lin[x * features.num_responses() + y];
    }
    LogitObjective out = kl_objective_and_gradient(reward, rho, policy, beta, pi_ref);
    // The linearized reward overcounts the norm term by xi * ||mu||; replace it.
    out.value = kl_regularized_value(terms.r_hat, rho, policy, beta, pi_ref) + estimate.xi * norm;
    if (effective_reward) *effective_reward = std::move(reward);
    return out;
}

// The optimistic value equals max over v in {||v||_A <= xi} of the soft value
// of r_hat + phi^T v, a convex function of v. Iterating v <- xi A^-1 mu / ||mu||
// with pi = Gibbs(r_hat + phi^T v) never decreases it; the search restarts from
// the given directions and keeps the best stationary point.
struct EllipsoidSearch {
    Policy policy;
    double value = -std::numeric_limits<double>::infinity();
};

EllipsoidSearch search_from(Vector v, const OptimisticTerms& terms, const RewardEstimate& estimate, double beta,
                            const Policy& pi_ref, const FeatureMap& features, const Vector& rho,
                            const OptimisticOptions& options) {
    const int ny = features.num_responses();
    auto policy_for = [&](const Vector& dir) {
        const Vector lin = features.table() * dir;
        Matrix reward = terms.r_hat;
        for (int x = 0; x < features.num_prompts(); ++x)
            for (int y = 0; y < ny; ++y) reward(x, y) += lin[x * ny + y];
        return gibbs_policy(reward, pi_ref, beta);
    };
    Policy policy = policy_for(v);
    for (int step = 0; step < options.max_steps; ++step) {
        const Vector mu = feature_expectation(policy, features, rho);
        const Vector a_mu = terms.factor.solve(mu);
        const double norm = std::sqrt(std::max(0.0, mu.dot(a_mu)));
        if (!(norm > 0.0)) break;
        Vector next = a_mu * (estimate.xi / norm);
        const double moved = (next - v).norm();
        v = std::move(next);
        policy = policy_for(v);
        if (moved <= options.tolerance * (1.0 + v.norm())) break;
    }
    const Vector mu = feature_expectation(policy, features, rho);
    const double norm = std::sqrt(std::max(0.0, mu.dot(terms.factor.solve(mu))));
    const double value = kl_regularized_value(terms.r_hat, rho, policy, beta, pi_ref) + estimate.xi * norm;
    return {std::move(policy), value};
}

}  // namespace

LogitObjective optimistic_value_and_gradient(const Policy& policy, const RewardEstimate& estimate, double beta,
                                             const Policy& pi_ref, const FeatureMap& features, const Vector& rho) {
    OptimisticTerms terms{reward_table(features, estimate.theta_hat.theta),
                          regularized_factor(estimate.sigma, estimate.lambda())};
    return optimistic_eval(policy, terms, estimate, beta, pi_ref, features, rho, nullptr);
}

Policy maximize_optimistic(const RewardEstimate& estimate, double beta, const Policy& pi_ref,
                           const FeatureMap& features, const Vector& rho, OptimisticMode mode,
                           const OptimisticOptions& options) {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
    const Matrix r_hat = reward_table(features, estimate.theta_hat.theta);
    if (estimate.xi == 0.0) return gibbs_policy(r_hat, pi_ref, beta);

    const Matrix bonus = ucb_pointwise_table(features, estimate.sigma, estimate.lambda());
    Policy pointwise = gibbs_policy(r_hat + estimate.xi * bonus, pi_ref, beta);
    switch (mode) {
        case OptimisticMode::PointwiseBonus:
            return pointwise;
        case OptimisticMode::ExactNorm: {
            const Matrix a = estimate.sigma + estimate.lambda() * Matrix::Identity(estimate.sigma.rows(),
                                                                                     estimate.sigma.cols());
            OptimisticTerms terms{r_hat, Eigen::LLT<Matrix>(a)};
            std::vector<Vector> starts;
            for (const Policy& seed : {pointwise, gibbs_policy(r_hat, pi_ref, beta)}) {
                const Vector mu = feature_expectation(seed, features, rho);
                const Vector a_mu = terms.factor.solve(mu);
                const double norm = std::sqrt(std::max(0.0, mu.dot(a_mu)));
                starts.push_back(norm > 0.0 ? Vector(a_mu * (estimate.xi / norm)) : Vector::Zero(a.rows()));
            }
            const Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
            for (int i = 0; i < a.rows(); ++i) {
                const Vector axis = eig.eigenvectors().col(i) * (estimate.xi / std::sqrt(eig.eigenvalues()[i]));
                starts.push_back(axis);
                starts.push_back(-axis);
            }
            EllipsoidSearch best;
            for (Vector& start : starts) {
                EllipsoidSearch found =
                    search_from(std::move(start), terms, estimate, beta, pi_ref, features, rho, options);
                if (found.value > best.value) best = std::move(found);
            }
            return best.policy;
        }
    }
    throw std::invalid_argument("unknown optimistic mode");
}

UcbEquivalence tabular_ucb_equivalence_check(const Policy& policy, const PreferenceDataset& dataset,
                                             const FeatureMap& features, double lambda, const Vector& rho) {
    if (features.kind() != FeatureKind::Tabular)
        throw std::invalid_argument("UCB/count equivalence needs a tabular feature map");
    const auto factor = regularized_factor(visit_gram(dataset, features), lambda);
    UcbEquivalence out;
    for (int x = 0; x < features.num_prompts(); ++x) {
        const Vector p = policy.probabilities(x);
        for (int y = 0; y < features.num_responses(); ++y) {
            const Vector phi = features.phi(x, y);
            const double weight = rho[x] * p[y];
            out.norm_form += weight * std::sqrt(phi.dot(factor.solve(phi)));
            out.count_form += weight / std::sqrt(static_cast<double>(dataset.count(x, y)) + lambda);
        }
    }
    return out;
}

}  // namespace copo
