#include "copo/core.hpp"

#include <algorithm>
#include <cmath>

namespace copo {

namespace {

std::string to_str(long long v) { return std::to_string(v); }

}  // namespace

int FeatureMap::pair_index(PromptId x, ResponseId y) const {
    check_prompt(x);
    check_response(y);
    return x * num_responses_ + y;
}

void FeatureMap::check_prompt(PromptId x) const {
    if (x < 0 || x >= num_prompts_)
        throw std::out_of_range("prompt id " + to_str(x) + " outside [0, " + to_str(num_prompts_) + ")");
}

void FeatureMap::check_response(ResponseId y) const {
    if (y < 0 || y >= num_responses_)
        throw std::out_of_range("response id " + to_str(y) + " outside [0, " + to_str(num_responses_) + ")");
}

FeatureMap FeatureMap::from_table(FeatureKind kind, int num_prompts, int num_responses, Matrix table) {
    if (num_prompts < 1) throw std::invalid_argument("feature map needs at least one prompt");
    if (num_responses < 2) throw std::invalid_argument("feature map needs at least two responses");
    if (table.rows() != static_cast<Eigen::Index>(num_prompts) * num_responses)
        throw std::invalid_argument("feature table has " + to_str(table.rows()) + " rows, expected |X|*|Y|");
    if (table.cols() < 1) throw std::invalid_argument("feature dimension must be positive");
    for (Eigen::Index r = 0; r < table.rows(); ++r) {
        if (table.row(r).norm() > 1.0 + 1e-12)
            throw std::invalid_argument("feature row " + to_str(r) + " has norm above 1");
    }
    return FeatureMap(kind, num_prompts, num_responses, std::move(table));
}

FeatureMap build_feature_map(FeatureKind kind, int num_prompts, int num_responses, int d_feat, Rng& rng) {
    if (num_prompts < 1) throw std::invalid_argument("feature map needs at least one prompt");
    if (num_responses < 2)
        throw std::invalid_argument("feature map needs at least two responses (no preferences possible)");
    const int pairs = num_prompts * num_responses;
    if (kind == FeatureKind::Tabular) {
        return FeatureMap::from_table(kind, num_prompts, num_responses, Matrix::Identity(pairs, pairs));
    }
    if (d_feat <= 0) throw std::invalid_argument("linear feature map needs d_feat > 0");
    Matrix table(pairs, d_feat);
    for (int r = 0; r < pairs; ++r) {
        for (int c = 0; c < d_feat; ++c) table(r, c) = rng.normal();
        double norm = table.row(r).norm();
        // A zero draw has probability zero; redraw rather than divide by it.
        while (norm == 0.0) {
            for (int c = 0; c < d_feat; ++c) table(r, c) = rng.normal();
            norm = table.row(r).norm();
        }
        table.row(r) /= norm;
    }
    return FeatureMap::from_table(kind, num_prompts, num_responses, std::move(table));
}

RewardParams project_to_theta_b(const Vector& v, double bound) {
    if (!(bound > 0.0)) throw std::invalid_argument("reward bound B must be positive");
    // Points already in Theta_B (up to rounding) are returned unchanged, which
    // makes the projection exactly idempotent.
    const double tol = 1e-12 * std::max(1.0, v.cwiseAbs().maxCoeff());
    if (std::abs(v.sum()) <= tol * v.size() && v.norm() <= bound * (1.0 + 1e-12)) return {v, bound};
    Vector theta = v.array() - v.mean();
    const double norm = theta.norm();
    if (norm > bound) theta *= bound / norm;
    return {std::move(theta), bound};
}

PreferenceDataset::PreferenceDataset(int num_prompts, int num_responses)
    : num_prompts_(num_prompts),
      num_responses_(num_responses),
      counts_(static_cast<std::size_t>(num_prompts) * num_responses, 0) {
    if (num_prompts < 1 || num_responses < 2) throw std::invalid_argument("dataset needs |X| >= 1 and |Y| >= 2");
}

void PreferenceDataset::add(const PreferencePair& pair) {
    if (pair.x < 0 || pair.x >= num_prompts_) throw std::out_of_range("pair prompt id out of range");
    if (pair.chosen < 0 || pair.chosen >= num_responses_ || pair.rejected < 0 || pair.rejected >= num_responses_)
        throw std::out_of_range("pair response id out of range");
    if (pair.chosen == pair.rejected) throw std::invalid_argument("preference pair needs two distinct responses");
    pairs_.push_back(pair);
    ++counts_[static_cast<std::size_t>(pair.x * num_responses_ + pair.chosen)];
    ++counts_[static_cast<std::size_t>(pair.x * num_responses_ + pair.rejected)];
}

void PreferenceDataset::append(const PreferenceDataset& other) {
    for (const auto& p : other.pairs()) add(p);
}

std::int64_t PreferenceDataset::count(PromptId x, ResponseId y) const {
    if (x < 0 || x >= num_prompts_ || y < 0 || y >= num_responses_) throw std::out_of_range("count id out of range");
    return counts_[static_cast<std::size_t>(x * num_responses_ + y)];
}

Vector PreferenceDataset::prompt_weights() const {
    Vector w = Vector::Zero(num_prompts_);
    if (pairs_.empty()) return w;
    for (const auto& p : pairs_) w[p.x] += 1.0;
    return w / static_cast<double>(pairs_.size());
}

Policy Policy::uniform(int num_prompts, int num_responses) {
    return Policy(Matrix::Zero(num_prompts, num_responses));
}

Policy Policy::from_probabilities(const Matrix& probs) {
    if ((probs.array() <= 0.0).any()) throw std::invalid_argument("policy probabilities must be strictly positive");
    return Policy(probs.array().log().matrix());
}

Vector Policy::probabilities(PromptId x) const {
    return softmax(logits_.row(x).transpose());
}

Vector Policy::log_probabilities(PromptId x) const {
    Vector row = logits_.row(x).transpose();
    return row.array() - log_sum_exp(row);
}

Matrix Policy::probability_table() const {
    Matrix out(logits_.rows(), logits_.cols());
    for (Eigen::Index x = 0; x < logits_.rows(); ++x) out.row(x) = probabilities(static_cast<int>(x)).transpose();
    return out;
}

Matrix Policy::log_probability_table() const {
    Matrix out(logits_.rows(), logits_.cols());
    for (Eigen::Index x = 0; x < logits_.rows(); ++x)
        out.row(x) = log_probabilities(static_cast<int>(x)).transpose();
    return out;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double log_sigmoid(double z) {
    if (z >= 0.0) return -std::log1p(std::exp(-z));
    return z - std::log1p(std::exp(z));
}

double log_sum_exp(const Vector& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}

Vector softmax(const Vector& v) {
    Vector e = (v.array() - v.maxCoeff()).exp();
    return e / e.sum();
}

Vector uniform_distribution(int n) {
    return Vector::Constant(n, 1.0 / n);
}

void check_distribution(const Vector& p, const std::string& what) {
    if ((p.array() < 0.0).any()) throw std::invalid_argument(what + " has a negative entry");
    if (std::abs(p.sum() - 1.0) > 1e-12) throw std::invalid_argument(what + " does not sum to 1");
}

}  // namespace copo
