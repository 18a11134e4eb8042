#include "copo/reward.hpp"

#include <cmath>
#include <map>
#include <tuple>

namespace copo {

kernels::DeltaBatch delta_batch(const PreferenceDataset& dataset, const FeatureMap& features) {
    std::map<std::tuple<int, int, int>, double> grouped;
    for (const auto& p : dataset.pairs()) grouped[{p.x, p.chosen, p.rejected}] += 1.0;
    kernels::DeltaBatch batch{Matrix(static_cast<Eigen::Index>(grouped.size()), features.dim()),
                              Vector(static_cast<Eigen::Index>(grouped.size()))};
    Eigen::Index i = 0;
    for (const auto& [key, weight] : grouped) {
        const auto& [x, chosen, rejected] = key;
        batch.rows.row(i) = (features.phi(x, chosen) - features.phi(x, rejected)).transpose();
        batch.weights[i] = weight;
        ++i;
    }
    return batch;
}

kernels::LossGrad nll_and_grad(const Vector& theta, const PreferenceDataset& dataset, const FeatureMap& features) {
    if (dataset.empty()) throw std::invalid_argument("nll_and_grad needs a non-empty dataset");
    if (theta.size() != features.dim()) throw std::invalid_argument("theta dimension does not match features");
    return kernels::parallel::logistic_nll(theta, delta_batch(dataset, features));
}

MleResult fit_mle(const PreferenceDataset& dataset, const FeatureMap& features, double bound,
                  const MleOptions& options, const std::optional<Vector>& warm_start) {
    if (dataset.empty()) throw std::invalid_argument("fit_mle needs a non-empty dataset");
    const auto batch = delta_batch(dataset, features);
    auto project = [bound](const Vector& v) { return project_to_theta_b(v, bound).theta; };

    Vector theta = warm_start ? project(*warm_start) : Vector::Zero(features.dim());
    kernels::LossGrad current = kernels::parallel::logistic_nll(theta, batch);
    // 1/L for L = n/4 * max ||d||^2 <= n is always a safe first step.
    double step = 1.0 / std::max(1.0, batch.total_weight());

    MleResult result;
    auto stationarity = [&](const Vector& t, const Vector& g) { return (t - project(t - g)).norm(); };
    double measure = stationarity(theta, current.grad);
    int iter = 0;
    while (iter < options.max_iters && measure > options.tolerance) {
        ++iter;
        Vector next;
        kernels::LossGrad trial;
        for (int halvings = 0;; ++halvings) {
            next = project(theta - step * current.grad);
            const Vector move = next - theta;
            trial = kernels::parallel::logistic_nll(next, batch);
            const double model = current.loss + current.grad.dot(move) + move.squaredNorm() / (2.0 * step);
            if (trial.loss <= model + 1e-12 * std::abs(current.loss) || halvings > 60) break;
            step *= 0.5;
        }
        const Vector s = next - theta;
        const Vector y = trial.grad - current.grad;
        theta = std::move(next);
        current = std::move(trial);
        const double sy = s.dot(y);
        // Barzilai-Borwein trial step for the next iteration.
        step = sy > 0.0 ? s.squaredNorm() / sy : step * 2.0;
        measure = stationarity(theta, current.grad);
        if (s.norm() == 0.0) break;
    }
    result.params = {theta, bound};
    result.loss = current.loss;
    result.projected_grad_norm = measure;
    result.iterations = iter;
    result.converged = measure <= options.tolerance;
    return result;
}

Matrix difference_gram(const PreferenceDataset& dataset, const FeatureMap& features) {
    if (dataset.empty()) throw std::invalid_argument("Gram matrix needs a non-empty dataset");
    return kernels::parallel::weighted_gram(delta_batch(dataset, features));
}

Matrix covariance(const PreferenceDataset& dataset, const FeatureMap& features) {
    return difference_gram(dataset, features) / static_cast<double>(dataset.size());
}

double link_curvature(double bound) {
    return 1.0 / (2.0 + std::exp(-bound) + std::exp(bound));
}

double confidence_radius(std::int64_t n, int d_feat, double delta, double gamma, double lambda, double bound,
                         double C) {
    if (n < 1) throw std::invalid_argument("confidence radius needs n >= 1");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
    if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
    if (!(bound > 0.0)) throw std::invalid_argument("B must be positive");
    if (!(C > 0.0)) throw std::invalid_argument("C must be positive");
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    if (d_feat < 1) throw std::invalid_argument("d_feat must be positive");
    const double stat = (d_feat + std::log(1.0 / delta)) / (gamma * gamma * static_cast<double>(n));
    return C * std::sqrt(stat + lambda * bound * bound);
}

double confidence_radius(std::int64_t n, int d_feat, const ConfidenceParams& p) {
    return confidence_radius(n, d_feat, p.delta, link_curvature(p.bound), p.lambda, p.bound, p.C);
}

RewardEstimate estimate_reward(const PreferenceDataset& dataset, const FeatureMap& features,
                               const ConfidenceParams& params, GramScaling scaling, const MleOptions& options,
                               const std::optional<Vector>& warm_start) {
    RewardEstimate est;
    est.fit = fit_mle(dataset, features, params.bound, options, warm_start);
    est.theta_hat = est.fit.params;
    est.sigma = scaling == GramScaling::Mean ? covariance(dataset, features) : difference_gram(dataset, features);
    est.n = static_cast<std::int64_t>(dataset.size());
    est.xi = confidence_radius(est.n, features.dim(), params);
    est.params = params;
    est.scaling = scaling;
    return est;
}

Eigen::LLT<Matrix> regularized_factor(const Matrix& sigma, double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive for the UCB metric");
    Matrix a = sigma;
    a.diagonal().array() += lambda;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) throw std::runtime_error("sigma + lambda I is not positive definite");
    return llt;
}

double ellipsoid_distance(const Vector& a, const Vector& b, const Matrix& sigma, double lambda) {
    const Vector diff = a - b;
    return std::sqrt(diff.dot(sigma * diff) + lambda * diff.squaredNorm());
}

Vector feature_expectation(const Policy& policy, const FeatureMap& features, const Vector& rho) {
    Vector mu = Vector::Zero(features.dim());
    for (int x = 0; x < features.num_prompts(); ++x) {
        const Vector p = policy.probabilities(x);
        for (int y = 0; y < features.num_responses(); ++y) mu += (rho[x] * p[y]) * features.phi(x, y);
    }
    return mu;
}

double ucb_expectation_norm(const Policy& policy, const FeatureMap& features, const Matrix& sigma, double lambda,
                            const Vector& rho) {
    const auto factor = regularized_factor(sigma, lambda);
    const Vector mu = feature_expectation(policy, features, rho);
    return std::sqrt(std::max(0.0, mu.dot(factor.solve(mu))));
}

double ucb_pointwise(PromptId x, ResponseId y, const FeatureMap& features, const Matrix& sigma, double lambda) {
    const auto factor = regularized_factor(sigma, lambda);
    const Vector phi = features.phi(x, y);
    return std::sqrt(std::max(0.0, phi.dot(factor.solve(phi))));
}

Matrix ucb_pointwise_table(const FeatureMap& features, const Matrix& sigma, double lambda) {
    const auto factor = regularized_factor(sigma, lambda);
    const Vector q = kernels::parallel::quadratic_forms(features.table(), factor);
    Matrix out(features.num_prompts(), features.num_responses());
    for (int x = 0; x < features.num_prompts(); ++x)
        for (int y = 0; y < features.num_responses(); ++y)
            out(x, y) = std::sqrt(std::max(0.0, q[x * features.num_responses() + y]));
    return out;
}

double log_det_spd(const Matrix& m) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) throw std::runtime_error("log_det_spd: matrix is not positive definite");
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

EllipticalPotential::EllipticalPotential(Matrix lambda0) : lambda_(std::move(lambda0)), log_det0_(log_det_spd(lambda_)) {}

double EllipticalPotential::add(const Vector& v) {
    Eigen::LLT<Matrix> llt(lambda_);
    const double term = v.dot(llt.solve(v));
    potential_ += term;
    lambda_.noalias() += v * v.transpose();
    return term;
}

double EllipticalPotential::log_det_ratio() const {
    return log_det_spd(lambda_) - log_det0_;
}

}  // namespace copo

namespace copo {

Matrix visit_gram(const PreferenceDataset& dataset, const FeatureMap& features) {
    Matrix g = Matrix::Zero(features.dim(), features.dim());
    for (int x = 0; x < features.num_prompts(); ++x) {
        for (int y = 0; y < features.num_responses(); ++y) {
            const auto n = dataset.count(x, y);
            if (n == 0) continue;
            const Vector phi = features.phi(x, y);
            g.noalias() += static_cast<double>(n) * phi * phi.transpose();
        }
    }
    return g;
}

}  // namespace copo
