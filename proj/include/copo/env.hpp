#pragma once

#include <span>

#include "copo/core.hpp"

namespace copo {

// Synthetic ground truth: linear reward theta_star^T phi(x, y) and a prompt
// distribution rho.
struct BanditEnv {
    FeatureMap features;
    RewardParams theta_star;
    Vector rho;

    int num_prompts() const { return features.num_prompts(); }
    int num_responses() const { return features.num_responses(); }
};

// Validates theta_star membership in Theta_B and rho; rho defaults to uniform.
BanditEnv make_env(FeatureMap features, RewardParams theta_star, Vector rho = {});

// theta_star drawn from a Gaussian, projected onto Theta_B and rescaled to
// norm `theta_norm` (which must not exceed `bound`).
BanditEnv random_env(FeatureMap features, double bound, double theta_norm, Rng& rng);

double true_reward(const BanditEnv& env, PromptId x, ResponseId y);
// |X| x |Y| table of true rewards.
Matrix reward_table(const BanditEnv& env);
Matrix reward_table(const FeatureMap& features, const Vector& theta);

double bt_preference_prob(const BanditEnv& env, PromptId x, ResponseId y1, ResponseId y2);
PreferencePair sample_preference(const BanditEnv& env, PromptId x, ResponseId y1, ResponseId y2, Rng& rng);

struct RankResult {
    ResponseId best;
    ResponseId worst;
};

// Oracle score model. Duplicates are dropped first; with noise_temp = 0 the
// ranking is by true reward with ties going to the smaller id, otherwise each
// distinct candidate (in increasing id order) gets Gumbel(0, noise_temp) noise.
RankResult rank_candidates(const BanditEnv& env, PromptId x, std::span<const ResponseId> candidates,
                           double noise_temp, Rng& rng);

// sum_x rho(x) sum_y pi(y|x) [r(x,y) - beta log(pi(y|x) / pi_ref(y|x))]
double kl_regularized_value(const Matrix& rewards, const Vector& rho, const Policy& policy, double beta,
                            const Policy& pi_ref);
double true_value(const BanditEnv& env, const Policy& policy, double beta, const Policy& pi_ref);

}  // namespace copo
