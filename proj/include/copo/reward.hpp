#pragma once

#include <cstdint>
#include <optional>

#include "copo/core.hpp"
#include "copo/kernels.hpp"

namespace copo {

// Identical (x, chosen, rejected) triples folded into one weighted row of
// phi(x, chosen) - phi(x, rejected). Rows are in sorted triple order.
kernels::DeltaBatch delta_batch(const PreferenceDataset& dataset, const FeatureMap& features);

// Bradley-Terry negative log-likelihood
//   -sum_i log sigmoid(<theta, phi(x_i, y_w) - phi(x_i, y_l)>)
// and its gradient.
kernels::LossGrad nll_and_grad(const Vector& theta, const PreferenceDataset& dataset, const FeatureMap& features);

struct MleOptions {
    int max_iters = 5000;
    double tolerance = 1e-8;
};

struct MleResult {
    RewardParams params;
    double loss = 0.0;
    // ||theta - P(theta - grad)||, zero exactly at a constrained minimizer.
    double projected_grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Projected gradient descent onto Theta_B with Barzilai-Borwein trial steps
// and a backtracking sufficient-decrease test. Starts from the projection of
// `warm_start` when given, else from zero.
MleResult fit_mle(const PreferenceDataset& dataset, const FeatureMap& features, double bound,
                  const MleOptions& options = {}, const std::optional<Vector>& warm_start = std::nullopt);

// (1/n) sum_i d_i d_i^T over pair differences.
Matrix covariance(const PreferenceDataset& dataset, const FeatureMap& features);
// sum_i d_i d_i^T (no 1/n).
Matrix difference_gram(const PreferenceDataset& dataset, const FeatureMap& features);

// gamma = 1 / (2 + e^{-B} + e^{B}), the minimum BT link curvature over Theta_B.
double link_curvature(double bound);

struct ConfidenceParams {
    double C = 1.0;
    double delta = 0.1;
    double lambda = 4.0;
    double bound = 1.0;
};

// C * sqrt((d + log(1/delta)) / (gamma^2 n) + lambda B^2)
double confidence_radius(std::int64_t n, int d_feat, double delta, double gamma, double lambda, double bound,
                         double C);
double confidence_radius(std::int64_t n, int d_feat, const ConfidenceParams& params);

// How the dataset Gram matrix enters the confidence metric: averaged over
// pairs (single-shot estimate) or summed (online regret analysis).
enum class GramScaling { Mean, Sum };

struct RewardEstimate {
    RewardParams theta_hat;
    Matrix sigma;
    std::int64_t n = 0;
    double xi = 0.0;
    ConfidenceParams params;
    GramScaling scaling = GramScaling::Mean;
    MleResult fit;

    double lambda() const { return params.lambda; }
};

RewardEstimate estimate_reward(const PreferenceDataset& dataset, const FeatureMap& features,
                               const ConfidenceParams& params, GramScaling scaling = GramScaling::Mean,
                               const MleOptions& options = {},
                               const std::optional<Vector>& warm_start = std::nullopt);

// ||a - b||_{sigma + lambda I}
double ellipsoid_distance(const Vector& a, const Vector& b, const Matrix& sigma, double lambda);

// E_{x~rho, y~pi}[phi(x, y)]
Vector feature_expectation(const Policy& policy, const FeatureMap& features, const Vector& rho);

// ||E_{x~rho, y~pi} phi(x, y)||_{(sigma + lambda I)^{-1}}, via Cholesky solve.
double ucb_expectation_norm(const Policy& policy, const FeatureMap& features, const Matrix& sigma, double lambda,
                            const Vector& rho);

// ||phi(x, y)||_{(sigma + lambda I)^{-1}}
double ucb_pointwise(PromptId x, ResponseId y, const FeatureMap& features, const Matrix& sigma, double lambda);
// The same for every pair, as an |X| x |Y| table.
Matrix ucb_pointwise_table(const FeatureMap& features, const Matrix& sigma, double lambda);

Eigen::LLT<Matrix> regularized_factor(const Matrix& sigma, double lambda);

// Tracks Lambda_t = Lambda_0 + sum_j v_j v_j^T together with the potential
// sum_j v_j^T Lambda_{j-1}^{-1} v_j and log det(Lambda_t) / det(Lambda_0).
class EllipticalPotential {
public:
    explicit EllipticalPotential(Matrix lambda0);

    // Returns v^T Lambda_{t-1}^{-1} v, then folds v into Lambda.
    double add(const Vector& v);

    double potential_sum() const { return potential_; }
    double log_det_ratio() const;
    const Matrix& lambda() const { return lambda_; }

private:
    Matrix lambda_;
    double log_det0_;
    double potential_ = 0.0;
};

double log_det_spd(const Matrix& m);

}  // namespace copo

namespace copo {

// sum over both slots of every pair of phi(x, y) phi(x, y)^T. For tabular
// features this is diag(N(x, y)).
Matrix visit_gram(const PreferenceDataset& dataset, const FeatureMap& features);

}  // namespace copo
