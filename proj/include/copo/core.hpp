#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "copo/rng.hpp"

namespace copo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Prompts and responses are opaque indices into finite sets.
using PromptId = int;
using ResponseId = int;

enum class FeatureKind { Tabular, Linear };

// phi(x, y) for every prompt-response pair, stored densely. Row x*|Y| + y of
// the table is phi(x, y); every row has Euclidean norm <= 1.
class FeatureMap {
public:
    FeatureKind kind() const { return kind_; }
    int num_prompts() const { return num_prompts_; }
    int num_responses() const { return num_responses_; }
    int dim() const { return static_cast<int>(table_.cols()); }
    int num_pairs() const { return num_prompts_ * num_responses_; }

    int pair_index(PromptId x, ResponseId y) const;
    auto phi(PromptId x, ResponseId y) const { return table_.row(pair_index(x, y)).transpose(); }
    const Matrix& table() const { return table_; }

    void check_prompt(PromptId x) const;
    void check_response(ResponseId y) const;

    // Accepts an explicit table; rows must have norm <= 1.
    static FeatureMap from_table(FeatureKind kind, int num_prompts, int num_responses, Matrix table);

private:
    FeatureMap(FeatureKind kind, int num_prompts, int num_responses, Matrix table)
        : kind_(kind), num_prompts_(num_prompts), num_responses_(num_responses), table_(std::move(table)) {}

    FeatureKind kind_;
    int num_prompts_;
    int num_responses_;
    Matrix table_;
};

// Tabular: one-hot basis, d_feat is ignored and becomes |X|*|Y|.
// Linear: isotropic Gaussian rows rescaled to unit norm.
FeatureMap build_feature_map(FeatureKind kind, int num_prompts, int num_responses, int d_feat, Rng& rng);

// Member of {theta : <1, theta> = 0, ||theta|| <= B}.
struct RewardParams {
    Vector theta;
    double bound = 1.0;
};

// Euclidean projection onto {<1, theta> = 0, ||theta|| <= B}. Idempotent.
RewardParams project_to_theta_b(const Vector& v, double bound);

struct PreferencePair {
    PromptId x = 0;
    ResponseId chosen = 0;
    ResponseId rejected = 0;
};

// Ordered preference triples with per-(x, y) visit counts over both slots.
class PreferenceDataset {
public:
    PreferenceDataset(int num_prompts, int num_responses);

    void add(const PreferencePair& pair);
    void append(const PreferenceDataset& other);

    const std::vector<PreferencePair>& pairs() const { return pairs_; }
    std::size_t size() const { return pairs_.size(); }
    bool empty() const { return pairs_.empty(); }
    int num_prompts() const { return num_prompts_; }
    int num_responses() const { return num_responses_; }

    std::int64_t count(PromptId x, ResponseId y) const;
    const std::vector<std::int64_t>& counts() const { return counts_; }
    // Fraction of pairs whose prompt is x.
    Vector prompt_weights() const;

private:
    int num_prompts_;
    int num_responses_;
    std::vector<PreferencePair> pairs_;
    std::vector<std::int64_t> counts_;
};

// Conditional distribution over responses per prompt, stored as logits.
class Policy {
public:
    Policy() = default;
    explicit Policy(Matrix logits) : logits_(std::move(logits)) {}

    static Policy uniform(int num_prompts, int num_responses);
    // probs rows must be strictly positive.
    static Policy from_probabilities(const Matrix& probs);

    int num_prompts() const { return static_cast<int>(logits_.rows()); }
    int num_responses() const { return static_cast<int>(logits_.cols()); }

    const Matrix& logits() const { return logits_; }
    Matrix& logits() { return logits_; }

    Vector probabilities(PromptId x) const;
    Vector log_probabilities(PromptId x) const;
    Matrix probability_table() const;
    Matrix log_probability_table() const;

private:
    Matrix logits_;
};

// Numerically stable primitives shared by every module.
double sigmoid(double z);
// log(sigmoid(z)) without overflow.
double log_sigmoid(double z);
double log_sum_exp(const Vector& v);
Vector softmax(const Vector& v);

Vector uniform_distribution(int n);
void check_distribution(const Vector& p, const std::string& what);

}  // namespace copo
