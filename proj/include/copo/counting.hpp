#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "copo/core.hpp"

namespace copo {

class ExactCounter {
public:
    ExactCounter(int num_prompts, int num_responses);

    void record(PromptId x, ResponseId y);
    std::int64_t count(PromptId x, ResponseId y) const;
    std::int64_t total() const { return total_; }
    int num_prompts() const { return num_prompts_; }
    int num_responses() const { return num_responses_; }

private:
    std::size_t index(PromptId x, ResponseId y) const;

    int num_prompts_;
    int num_responses_;
    std::vector<std::int64_t> table_;
    std::int64_t total_ = 0;
};

// d_coin i.i.d. fair coin flips in {-1, +1}.
Vector make_coin_label(int d_coin, Rng& rng);

struct CfnExample {
    Vector state;
    Vector label;
};
using CfnDataset = std::vector<CfnExample>;

// One example per (prompt, response) occurrence with state phi(x, y) and a
// fresh coin label, so repeated states get independent labels.
CfnDataset build_cfn_dataset(std::span<const PromptId> prompts, std::span<const ResponseId> responses,
                             const FeatureMap& features, int d_coin, Rng& rng);

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;
};

struct CfnArchitecture {
    int d_state = 1;
    std::vector<int> hidden = {32};
    int d_coin = 20;
};

// Coin flipping network: fully connected, leaky-rectifier hidden layers and a
// linear output of width d_coin. ||f(s)||^2 / d_coin estimates 1 / N(s).
class CoinFlipNet {
public:
    static constexpr double kLeakySlope = 0.01;

    // Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); the output layer
    // starts at zero when zero_output is set.
    CoinFlipNet(const CfnArchitecture& arch, Rng& rng, bool zero_output = false);
    explicit CoinFlipNet(std::vector<DenseLayer> layers);

    int d_state() const { return static_cast<int>(layers_.front().weight.cols()); }
    int d_coin() const { return static_cast<int>(layers_.back().weight.rows()); }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }

    Vector forward(const Vector& state) const;

    std::size_t parameter_count() const;
    Vector parameters() const;
    void set_parameters(const Vector& flat);

private:
    std::vector<DenseLayer> layers_;
};

struct CfnLossGrad {
    double loss = 0.0;
    std::vector<DenseLayer> grads;

    Vector flatten() const;
};

// Mean over the batch of ||label - f(state)||^2 with backpropagated gradients.
CfnLossGrad cfn_loss_grad(const CoinFlipNet& net, std::span<const CfnExample> batch);
double cfn_loss(const CoinFlipNet& net, std::span<const CfnExample> batch);

struct CfnTrainOptions {
    int epochs = 1;
    double learning_rate = 1e-4;
    double momentum = 0.9;
    int batch_size = 32;
};

struct CfnTrace {
    double initial_loss = 0.0;
    // Full-dataset loss after each epoch.
    std::vector<double> epoch_loss;
};

// Mini-batch SGD with momentum. Owns the velocity buffers so successive calls
// continue the same optimizer state.
class CfnTrainer {
public:
    CfnTrainer(CoinFlipNet net, CfnTrainOptions options);

    CfnTrace train(const CfnDataset& data, Rng& rng);
    // Fresh weights drawn from `rng`, zeroed velocity.
    void reset(const CfnArchitecture& arch, Rng& rng);

    const CoinFlipNet& net() const { return net_; }
    const CfnTrainOptions& options() const { return options_; }

private:
    CoinFlipNet net_;
    CfnTrainOptions options_;
    std::vector<DenseLayer> velocity_;
};

CfnTrace cfn_train(CoinFlipNet& net, const CfnDataset& data, const CfnTrainOptions& options, Rng& rng);

inline constexpr double kPseudocountFloor = 1e-8;

// d_coin / max(||f(s)||^2, floor)
double cfn_pseudocount(const CoinFlipNet& net, const Vector& state);
// sqrt(||f(s)||^2 / d_coin) clamped to [0, 1]
double cfn_bonus(const CoinFlipNet& net, const Vector& state);
double pseudocount_from_prediction(const Vector& prediction);
double bonus_from_prediction(const Vector& prediction);

// Free per-state predictor: the MSE optimum for a state seen m times is the
// mean of its m labels. Used to check the inverse-count identity without the
// network's approximation error.
class IdealCoinTable {
public:
    explicit IdealCoinTable(int d_coin) : d_coin_(d_coin) {}

    void record(std::size_t key, const Vector& label);
    Vector prediction(std::size_t key) const;
    std::int64_t occurrences(std::size_t key) const;

private:
    int d_coin_;
    std::vector<Vector> sums_;
    std::vector<std::int64_t> counts_;
};

// Text checkpoint, layer order, row-major:
//   copo-cfn 1
//   layers <L>
//   layer <out> <in>
//   <out lines of <in> weights>
//   <one line of <out> biases>
// repeated L times. Values use 17 significant digits.
void save_checkpoint(const CoinFlipNet& net, std::ostream& out);
CoinFlipNet load_checkpoint(std::istream& in);

}  // namespace copo
