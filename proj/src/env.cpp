#include "copo/env.hpp"

#include <algorithm>
#include <cmath>

namespace copo {

BanditEnv make_env(FeatureMap features, RewardParams theta_star, Vector rho) {
    if (theta_star.theta.size() != features.dim())
        throw std::invalid_argument("theta_star dimension does not match the feature map");
    if (std::abs(theta_star.theta.sum()) > 1e-9) throw std::invalid_argument("theta_star must satisfy <1, theta> = 0");
    if (theta_star.theta.norm() > theta_star.bound + 1e-9) throw std::invalid_argument("theta_star exceeds bound B");
    if (rho.size() == 0) rho = uniform_distribution(features.num_prompts());
    if (rho.size() != features.num_prompts()) throw std::invalid_argument("rho must have one entry per prompt");
    check_distribution(rho, "rho");
    return BanditEnv{std::move(features), std::move(theta_star), std::move(rho)};
}

BanditEnv random_env(FeatureMap features, double bound, double theta_norm, Rng& rng) {
    if (theta_norm > bound) throw std::invalid_argument("theta_star norm exceeds bound B");
    Vector v(features.dim());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    RewardParams theta = project_to_theta_b(v, bound);
    const double n = theta.theta.norm();
    if (n > 0.0) theta.theta *= theta_norm / n;
    return make_env(std::move(features), std::move(theta));
}

double true_reward(const BanditEnv& env, PromptId x, ResponseId y) {
    return env.features.phi(x, y).dot(env.theta_star.theta);
}

Matrix reward_table(const FeatureMap& features, const Vector& theta) {
    const Vector flat = features.table() * theta;
    Matrix out(features.num_prompts(), features.num_responses());
    for (int x = 0; x < features.num_prompts(); ++x)
        for (int y = 0; y < features.num_responses(); ++y) out(x, y) = flat[x * features.num_responses() + y];
    return out;
}

Matrix reward_table(const BanditEnv& env) {
    return reward_table(env.features, env.theta_star.theta);
}

double bt_preference_prob(const BanditEnv& env, PromptId x, ResponseId y1, ResponseId y2) {
    return sigmoid(true_reward(env, x, y1) - true_reward(env, x, y2));
}

PreferencePair sample_preference(const BanditEnv& env, PromptId x, ResponseId y1, ResponseId y2, Rng& rng) {
    if (y1 == y2) throw std::invalid_argument("sample_preference needs two distinct responses");
    const double p = bt_preference_prob(env, x, y1, y2);
    if (rng.uniform() < p) return {x, y1, y2};
    return {x, y2, y1};
}

RankResult rank_candidates(const BanditEnv& env, PromptId x, std::span<const ResponseId> candidates,
                           double noise_temp, Rng& rng) {
    std::vector<ResponseId> ids(candidates.begin(), candidates.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.size() < 2) throw std::invalid_argument("rank_candidates needs at least two distinct candidates");
    if (noise_temp < 0.0) throw std::invalid_argument("noise_temp must be non-negative");

    std::vector<double> score(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        score[i] = true_reward(env, x, ids[i]);
        if (noise_temp > 0.0) score[i] += noise_temp * rng.gumbel();
    }
    // Strict comparisons over increasing ids keep the smallest id on ties.
    std::size_t best = 0;
    for (std::size_t i = 1; i < ids.size(); ++i)
        if (score[i] > score[best]) best = i;
    std::size_t worst = best == 0 ? 1 : 0;
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (i != best && score[i] < score[worst]) worst = i;
    return {ids[best], ids[worst]};
}

double kl_regularized_value(const Matrix& rewards, const Vector& rho, const Policy& policy, double beta,
                            const Policy& pi_ref) {
    if (beta < 0.0) throw std::invalid_argument("beta must be non-negative");
    double total = 0.0;
    for (int x = 0; x < rewards.rows(); ++x) {
        const Vector lp = policy.log_probabilities(x);
        const Vector lref = pi_ref.log_probabilities(x);
        const Vector p = lp.array().exp();
        double inner = 0.0;
        for (int y = 0; y < rewards.cols(); ++y) inner += p[y] * (rewards(x, y) - beta * (lp[y] - lref[y]));
        total += rho[x] * inner;
    }
    return total;
}

double true_value(const BanditEnv& env, const Policy& policy, double beta, const Policy& pi_ref) {
    return kl_regularized_value(reward_table(env), env.rho, policy, beta, pi_ref);
}

}  // namespace copo
