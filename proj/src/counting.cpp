#include "copo/counting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

namespace copo {

ExactCounter::ExactCounter(int num_prompts, int num_responses)
    : num_prompts_(num_prompts),
      num_responses_(num_responses),
      table_(static_cast<std::size_t>(num_prompts) * num_responses, 0) {
    if (num_prompts < 1 || num_responses < 1) throw std::invalid_argument("counter needs positive dimensions");
}

std::size_t ExactCounter::index(PromptId x, ResponseId y) const {
    if (x < 0 || x >= num_prompts_ || y < 0 || y >= num_responses_) throw std::out_of_range("counter id out of range");
    return static_cast<std::size_t>(x) * num_responses_ + y;
}

void ExactCounter::record(PromptId x, ResponseId y) {
    ++table_[index(x, y)];
    ++total_;
}

std::int64_t ExactCounter::count(PromptId x, ResponseId y) const {
    return table_[index(x, y)];
}

Vector make_coin_label(int d_coin, Rng& rng) {
    if (d_coin < 1) throw std::invalid_argument("d_coin must be >= 1");
    Vector label(d_coin);
    for (int i = 0; i < d_coin; ++i) label[i] = (rng.next_u64() >> 63) ? 1.0 : -1.0;
    return label;
}

CfnDataset build_cfn_dataset(std::span<const PromptId> prompts, std::span<const ResponseId> responses,
                             const FeatureMap& features, int d_coin, Rng& rng) {
    if (prompts.size() != responses.size())
        throw std::invalid_argument("build_cfn_dataset: prompt and response lists differ in length");
    CfnDataset out;
    out.reserve(prompts.size());
    for (std::size_t i = 0; i < prompts.size(); ++i)
        out.push_back({features.phi(prompts[i], responses[i]), make_coin_label(d_coin, rng)});
    return out;
}

namespace {

double leaky(double z) { return z > 0.0 ? z : CoinFlipNet::kLeakySlope * z; }
double leaky_slope(double z) { return z > 0.0 ? 1.0 : CoinFlipNet::kLeakySlope; }

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& layers) {
    std::vector<DenseLayer> out;
    out.reserve(layers.size());
    for (const auto& l : layers)
        out.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    return out;
}

}  // namespace

CoinFlipNet::CoinFlipNet(const CfnArchitecture& arch, Rng& rng, bool zero_output) {
    if (arch.d_state < 1 || arch.d_coin < 1) throw std::invalid_argument("CFN needs positive input and output widths");
    std::vector<int> sizes{arch.d_state};
    for (int h : arch.hidden) {
        if (h < 1) throw std::invalid_argument("CFN hidden widths must be positive");
        sizes.push_back(h);
    }
    sizes.push_back(arch.d_coin);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int in = sizes[l];
        const int out = sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        DenseLayer layer{Matrix(out, in), Vector(out)};
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) layer.weight(r, c) = bound * (2.0 * rng.uniform() - 1.0);
        for (int r = 0; r < out; ++r) layer.bias[r] = bound * (2.0 * rng.uniform() - 1.0);
        layers_.push_back(std::move(layer));
    }
    if (zero_output) {
        layers_.back().weight.setZero();
        layers_.back().bias.setZero();
    }
}

CoinFlipNet::CoinFlipNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw std::invalid_argument("CFN needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (layers_[l].bias.size() != layers_[l].weight.rows())
            throw std::invalid_argument("CFN layer bias does not match its weight rows");
        if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows())
            throw std::invalid_argument("CFN layer widths do not chain");
    }
}

Vector CoinFlipNet::forward(const Vector& state) const {
    if (state.size() != d_state()) throw std::invalid_argument("CFN state has the wrong dimension");
    Vector a = state;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Vector z = layers_[l].weight * a + layers_[l].bias;
        if (l + 1 < layers_.size()) z = z.unaryExpr(&leaky);
        a = std::move(z);
    }
    return a;
}

std::size_t CoinFlipNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

namespace {

Vector flatten_layers(const std::vector<DenseLayer>& layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    Vector out(static_cast<Eigen::Index>(n));
    Eigen::Index k = 0;
    for (const auto& l : layers) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out[k++] = l.weight(r, c);
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) out[k++] = l.bias[r];
    }
    return out;
}

}  // namespace

Vector CoinFlipNet::parameters() const { return flatten_layers(layers_); }

void CoinFlipNet::set_parameters(const Vector& flat) {
    if (static_cast<std::size_t>(flat.size()) != parameter_count())
        throw std::invalid_argument("CFN parameter vector has the wrong length");
    Eigen::Index k = 0;
    for (auto& l : layers_) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[k++];
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = flat[k++];
    }
}

Vector CfnLossGrad::flatten() const { return flatten_layers(grads); }

CfnLossGrad cfn_loss_grad(const CoinFlipNet& net, std::span<const CfnExample> batch) {
    if (batch.empty()) throw std::invalid_argument("CFN loss needs a non-empty batch");
    const auto& layers = net.layers();
    const std::size_t depth = layers.size();
    CfnLossGrad out{0.0, zeros_like(layers)};
    const double scale = 1.0 / static_cast<double>(batch.size());

    std::vector<Vector> pre(depth);
    std::vector<Vector> act(depth + 1);
    for (const auto& ex : batch) {
        if (ex.state.size() != net.d_state() || ex.label.size() != net.d_coin())
            throw std::invalid_argument("CFN example has the wrong dimension");
        act[0] = ex.state;
        for (std::size_t l = 0; l < depth; ++l) {
            pre[l] = layers[l].weight * act[l] + layers[l].bias;
            act[l + 1] = l + 1 < depth ? Vector(pre[l].unaryExpr(&leaky)) : pre[l];
        }
        const Vector residual = act[depth] - ex.label;
        out.loss += scale * residual.squaredNorm();

        Vector delta = (2.0 * scale) * residual;
        for (std::size_t l = depth; l-- > 0;) {
            out.grads[l].weight.noalias() += delta * act[l].transpose();
            out.grads[l].bias += delta;
            if (l == 0) break;
            Vector back = layers[l].weight.transpose() * delta;
            delta = back.cwiseProduct(pre[l - 1].unaryExpr(&leaky_slope));
        }
    }
    return out;
}

double cfn_loss(const CoinFlipNet& net, std::span<const CfnExample> batch) {
    if (batch.empty()) throw std::invalid_argument("CFN loss needs a non-empty batch");
    double loss = 0.0;
    for (const auto& ex : batch) loss += (net.forward(ex.state) - ex.label).squaredNorm();
    return loss / static_cast<double>(batch.size());
}

CfnTrainer::CfnTrainer(CoinFlipNet net, CfnTrainOptions options)
    : net_(std::move(net)), options_(options), velocity_(zeros_like(net_.layers())) {
    if (options_.batch_size < 1) throw std::invalid_argument("CFN batch size must be >= 1");
    if (options_.epochs < 0) throw std::invalid_argument("CFN epochs must be >= 0");
}

void CfnTrainer::reset(const CfnArchitecture& arch, Rng& rng) {
    net_ = CoinFlipNet(arch, rng);
    velocity_ = zeros_like(net_.layers());
}

CfnTrace CfnTrainer::train(const CfnDataset& data, Rng& rng) {
    if (data.empty()) throw std::invalid_argument("cfn_train needs a non-empty dataset");
    CfnTrace trace;
    trace.initial_loss = cfn_loss(net_, data);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    CfnDataset batch;
    for (int epoch = 0; epoch < options_.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options_.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options_.batch_size));
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
            const auto lg = cfn_loss_grad(net_, batch);
            auto& layers = net_.layers();
            for (std::size_t l = 0; l < layers.size(); ++l) {
                velocity_[l].weight = options_.momentum * velocity_[l].weight - options_.learning_rate * lg.grads[l].weight;
                velocity_[l].bias = options_.momentum * velocity_[l].bias - options_.learning_rate * lg.grads[l].bias;
                layers[l].weight += velocity_[l].weight;
                layers[l].bias += velocity_[l].bias;
            }
        }
        trace.epoch_loss.push_back(cfn_loss(net_, data));
    }
    return trace;
}

CfnTrace cfn_train(CoinFlipNet& net, const CfnDataset& data, const CfnTrainOptions& options, Rng& rng) {
    CfnTrainer trainer(net, options);
    auto trace = trainer.train(data, rng);
    net = trainer.net();
    return trace;
}

double pseudocount_from_prediction(const Vector& prediction) {
    return static_cast<double>(prediction.size()) / std::max(prediction.squaredNorm(), kPseudocountFloor);
}

double bonus_from_prediction(const Vector& prediction) {
    return std::clamp(std::sqrt(prediction.squaredNorm() / static_cast<double>(prediction.size())), 0.0, 1.0);
}

double cfn_pseudocount(const CoinFlipNet& net, const Vector& state) {
    return pseudocount_from_prediction(net.forward(state));
}

double cfn_bonus(const CoinFlipNet& net, const Vector& state) {
    return bonus_from_prediction(net.forward(state));
}

void IdealCoinTable::record(std::size_t key, const Vector& label) {
    if (label.size() != d_coin_) throw std::invalid_argument("coin label has the wrong dimension");
    if (key >= sums_.size()) {
        sums_.resize(key + 1, Vector::Zero(d_coin_));
        counts_.resize(key + 1, 0);
    }
    sums_[key] += label;
    ++counts_[key];
}

Vector IdealCoinTable::prediction(std::size_t key) const {
    if (key >= counts_.size() || counts_[key] == 0) return Vector::Zero(d_coin_);
    return sums_[key] / static_cast<double>(counts_[key]);
}

std::int64_t IdealCoinTable::occurrences(std::size_t key) const {
    return key < counts_.size() ? counts_[key] : 0;
}

void save_checkpoint(const CoinFlipNet& net, std::ostream& out) {
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    out << "copo-cfn 1\n";
    out << "layers " << net.layers().size() << "\n";
    for (const auto& l : net.layers()) {
        out << "layer " << l.weight.rows() << " " << l.weight.cols() << "\n";
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
                if (c) out << ' ';
                put(l.weight(r, c));
            }
            out << "\n";
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
            if (r) out << ' ';
            put(l.bias[r]);
        }
        out << "\n";
    }
}

CoinFlipNet load_checkpoint(std::istream& in) {
    std::string tag;
    int version = 0;
    if (!(in >> tag >> version) || tag != "copo-cfn" || version != 1)
        throw std::runtime_error("not a copo-cfn v1 checkpoint");
    std::size_t count = 0;
    if (!(in >> tag >> count) || tag != "layers" || count == 0) throw std::runtime_error("checkpoint: bad layer count");
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l < count; ++l) {
        Eigen::Index rows = 0, cols = 0;
        if (!(in >> tag >> rows >> cols) || tag != "layer" || rows < 1 || cols < 1)
            throw std::runtime_error("checkpoint: bad layer header " + std::to_string(l));
        DenseLayer layer{Matrix(rows, cols), Vector(rows)};
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c)
                if (!(in >> layer.weight(r, c))) throw std::runtime_error("checkpoint: truncated weights");
        for (Eigen::Index r = 0; r < rows; ++r)
            if (!(in >> layer.bias[r])) throw std::runtime_error("checkpoint: truncated biases");
        layers.push_back(std::move(layer));
    }
    return CoinFlipNet(std::move(layers));
}

}  // namespace copo
