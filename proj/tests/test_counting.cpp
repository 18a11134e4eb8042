#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "copo/counting.hpp"

using namespace copo;

namespace {

CoinFlipNet random_net(int d_state, std::vector<int> hidden, int d_coin, Rng& rng) {
    CfnArchitecture arch;
    arch.d_state = d_state;
    arch.hidden = std::move(hidden);
    arch.d_coin = d_coin;
    CoinFlipNet net(arch, rng);
    // Nonzero biases so every parameter block is exercised.
    Vector p = net.parameters();
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += 0.1 * rng.normal();
    net.set_parameters(p);
    return net;
}

std::vector<CfnExample> random_batch(int n, int d_state, int d_coin, Rng& rng) {
    std::vector<CfnExample> out;
    for (int i = 0; i < n; ++i) {
        Vector s(d_state);
        for (int j = 0; j < d_state; ++j) s[j] = rng.normal();
        out.push_back({s, make_coin_label(d_coin, rng)});
    }
    return out;
}

// Two one-hot states visited m1 and m2 times.
CfnDataset two_state_data(int m1, int m2, int d_coin, Rng& rng) {
    CfnDataset data;
    for (int i = 0; i < m1 + m2; ++i) {
        Vector s = Vector::Zero(2);
        s[i < m1 ? 0 : 1] = 1.0;
        data.push_back({s, make_coin_label(d_coin, rng)});
    }
    return data;
}

}  // namespace

TEST_CASE("exact counter") {
    ExactCounter c(3, 4);
    CHECK(c.count(2, 3) == 0);
    for (int i = 0; i < 3; ++i) c.record(1, 2);
    CHECK(c.count(1, 2) == 3);
    CHECK_THROWS(c.record(3, 0));
    CHECK_THROWS(c.count(0, 4));

    Rng rng(1);
    ExactCounter d(3, 4);
    std::vector<std::pair<int, int>> log;
    for (int i = 0; i < 100; ++i) {
        const int x = static_cast<int>(rng.uniform_index(3));
        const int y = static_cast<int>(rng.uniform_index(4));
        d.record(x, y);
        log.emplace_back(x, y);
    }
    CHECK(d.total() == 100);
    for (int x = 0; x < 3; ++x)
        for (int y = 0; y < 4; ++y)
            CHECK(d.count(x, y) == std::count(log.begin(), log.end(), std::make_pair(x, y)));
}

TEST_CASE("coin labels") {
    Rng rng(2);
    const Vector one = make_coin_label(1, rng);
    CHECK(std::abs(one[0]) == 1.0);
    Vector sum = Vector::Zero(20);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const Vector c = make_coin_label(20, rng);
        CHECK(c.squaredNorm() == 20.0);
        sum += c;
    }
    CHECK((sum / n).cwiseAbs().maxCoeff() < 0.02);
    CHECK_THROWS(make_coin_label(0, rng));
}

TEST_CASE("CFN dataset construction") {
    Rng rng(3);
    const FeatureMap f = build_feature_map(FeatureKind::Tabular, 2, 3, 0, rng);
    const PromptId xs[] = {1, 1};
    const ResponseId ys[] = {2, 2};
    const CfnDataset d = build_cfn_dataset(xs, ys, f, 20, rng);
    REQUIRE(d.size() == 2);
    CHECK(d[0].state == d[1].state);
    CHECK(d[0].state == f.phi(1, 2));
    CHECK(d[0].label != d[1].label);
    CHECK(build_cfn_dataset({}, {}, f, 20, rng).empty());
    const ResponseId short_ys[] = {2};
    CHECK_THROWS(build_cfn_dataset(xs, short_ys, f, 20, rng));

    std::vector<PromptId> many_x(1000, 0);
    std::vector<ResponseId> many_y(1000, 1);
    const CfnDataset big = build_cfn_dataset(many_x, many_y, f, 20, rng);
    Vector mean = Vector::Zero(20);
    for (const auto& e : big) mean += e.label;
    mean /= 1000.0;
    CHECK(std::abs(mean.squaredNorm() / (20.0 / 1000.0) - 1.0) < 0.3);
}

TEST_CASE("CFN forward and loss") {
    Rng rng(4);
    CfnArchitecture arch;
    arch.d_state = 6;
    arch.hidden = {32};
    arch.d_coin = 20;
    const CoinFlipNet zero(arch, rng, true);
    CHECK(zero.d_coin() == 20);
    CHECK(zero.d_state() == 6);
    const auto batch = random_batch(5, 6, 20, rng);
    CHECK(zero.forward(batch[0].state) == Vector::Zero(20));
    CHECK(cfn_loss(zero, batch) == doctest::Approx(20.0).epsilon(1e-15));
    CHECK_THROWS(zero.forward(Vector::Zero(5)));
    CHECK(zero.parameter_count() == static_cast<std::size_t>(6 * 32 + 32 + 32 * 20 + 20));

    // Manual two-layer forward pass.
    const CoinFlipNet net = random_net(6, {32}, 20, rng);
    const auto& L = net.layers();
    Vector h = L[0].weight * batch[1].state + L[0].bias;
    for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = h[i] > 0 ? h[i] : 0.01 * h[i];
    const Vector out = L[1].weight * h + L[1].bias;
    CHECK((net.forward(batch[1].state) - out).norm() < 1e-13);
}

TEST_CASE("CFN gradients match finite differences") {
    Rng rng(5);
    for (const std::vector<int>& hidden : {std::vector<int>{32}, std::vector<int>{32, 20}, std::vector<int>{}}) {
        for (int trial = 0; trial < 5; ++trial) {
            const CoinFlipNet net = random_net(7, hidden, 5, rng);
            const auto batch = random_batch(8, 7, 5, rng);
            const Vector g = cfn_loss_grad(net, batch).flatten();
            const Vector p = net.parameters();
            CHECK(cfn_loss_grad(net, batch).loss == doctest::Approx(cfn_loss(net, batch)).epsilon(1e-14));
            const double h = 1e-5;
            Vector fd(p.size());
            for (Eigen::Index i = 0; i < p.size(); ++i) {
                CoinFlipNet a = net, b = net;
                Vector pa = p, pb = p;
                pa[i] += h;
                pb[i] -= h;
                a.set_parameters(pa);
                b.set_parameters(pb);
                fd[i] = (cfn_loss(a, batch) - cfn_loss(b, batch)) / (2 * h);
            }
            CHECK((fd - g).norm() / std::max(1e-12, g.norm()) < 1e-5);
        }
    }
}

TEST_CASE("CFN training") {
    Rng rng(6);
    CfnTrainOptions fast;
    fast.learning_rate = 0.02;
    fast.epochs = 2000;
    SUBCASE("one example is interpolated") {
        CoinFlipNet net = random_net(3, {32}, 20, rng);
        CfnDataset data{{Vector::Ones(3) / std::sqrt(3.0), make_coin_label(20, rng)}};
        const CfnTrace t = cfn_train(net, data, fast, rng);
        CHECK(t.epoch_loss.back() < 1e-8);
        CHECK(cfn_pseudocount(net, data[0].state) == doctest::Approx(1.0).epsilon(1e-4));
        CHECK(cfn_bonus(net, data[0].state) == doctest::Approx(1.0).epsilon(1e-4));
    }
    SUBCASE("repeated state regresses to the mean label") {
        CoinFlipNet net = random_net(3, {32}, 20, rng);
        CfnDataset data;
        Vector s(3);
        s << 0.6, 0.0, 0.8;
        Vector mean = Vector::Zero(20);
        for (int i = 0; i < 4; ++i) {
            data.push_back({s, make_coin_label(20, rng)});
            mean += data.back().label / 4.0;
        }
        cfn_train(net, data, fast, rng);
        CHECK((net.forward(s) - mean).cwiseAbs().maxCoeff() < 1e-3);
    }
    SUBCASE("default options keep the loss finite and non-increasing") {
        CoinFlipNet net = random_net(4, {32}, 20, rng);
        const auto batch = random_batch(64, 4, 20, rng);
        CfnTrainOptions opts;
        opts.epochs = 50;
        const CfnTrace t = cfn_train(net, CfnDataset(batch.begin(), batch.end()), opts, rng);
        REQUIRE(t.epoch_loss.size() == 50);
        for (double l : t.epoch_loss) CHECK(std::isfinite(l));
        CHECK(t.epoch_loss.back() <= t.initial_loss);
    }
    SUBCASE("warm trainer continues, reset starts over") {
        CfnArchitecture arch;
        arch.d_state = 2;
        Rng a(9), b(9);
        CfnTrainer warm(CoinFlipNet(arch, a), fast);
        const CfnDataset data = two_state_data(1, 3, 20, rng);
        Rng ta(1), tb(1);
        warm.train(data, ta);
        const Vector after_first = warm.net().parameters();
        CfnTrainer fresh(CoinFlipNet(arch, b), fast);
        fresh.train(data, tb);
        CHECK(fresh.net().parameters() == after_first);
        warm.train(data, ta);
        CHECK(warm.net().parameters() != after_first);
        Rng r1(4), r2(4);
        warm.reset(arch, r1);
        CHECK(warm.net().parameters() == CoinFlipNet(arch, r2).parameters());
    }
    SUBCASE("rarely seen state gets the smaller pseudocount") {
        int ordered = 0;
        for (int seed = 0; seed < 20; ++seed) {
            Rng r(100 + static_cast<std::uint64_t>(seed));
            CfnArchitecture arch;
            arch.d_state = 2;
            CoinFlipNet net(arch, r);
            CfnTrainOptions opts;
            opts.learning_rate = 0.01;
            opts.epochs = 100;
            const CfnDataset data = two_state_data(1, 100, 20, r);
            cfn_train(net, data, opts, r);
            ordered += cfn_pseudocount(net, data.front().state) < cfn_pseudocount(net, data.back().state);
        }
        CHECK(ordered == 20);
    }
}

TEST_CASE("pseudocount and bonus readouts") {
    const Vector single = Vector::Constant(20, -1.0);
    CHECK(pseudocount_from_prediction(single) == 1.0);
    CHECK(bonus_from_prediction(single) == 1.0);
    const Vector tiny = Vector::Zero(20);
    CHECK(pseudocount_from_prediction(tiny) == doctest::Approx(20.0 / kPseudocountFloor));
    CHECK(bonus_from_prediction(tiny) == 0.0);
    CHECK(bonus_from_prediction(Vector::Constant(20, 3.0)) == 1.0);
    Vector mid = Vector::Constant(20, 0.5);
    CHECK(bonus_from_prediction(mid) == doctest::Approx(1.0 / std::sqrt(pseudocount_from_prediction(mid))));
}

TEST_CASE("idealized per-state optimum recovers inverse counts") {
    Rng rng(7);
    const int reps = 2000;
    auto moments = [&](int m, int d_coin) {
        // Returns mean of ||f||^2/d, its variance, and the mean pseudocount.
        double s = 0.0, s2 = 0.0, pc = 0.0;
        for (int r = 0; r < reps; ++r) {
            IdealCoinTable table(d_coin);
            for (int i = 0; i < m; ++i) table.record(0, make_coin_label(d_coin, rng));
            const Vector f = table.prediction(0);
            const double z = f.squaredNorm() / d_coin;
            s += z;
            s2 += z * z;
            pc += pseudocount_from_prediction(f);
        }
        const double mean = s / reps;
        return std::array<double, 3>{mean, s2 / reps - mean * mean, pc / reps};
    };
    for (int m : {1, 4, 25, 100}) {
        const auto mo = moments(m, 20);
        CHECK(std::abs(mo[0] * m - 1.0) < 0.15);
        CHECK(std::abs(mo[2] / m - 1.0) < 0.15);
    }
    // The variance of ||f||^2/d scales as 1/d, so the d=20 vs d=5 ratio is 1/4
    // in expectation; the check allows Monte-Carlo error around that value.
    for (int m : {4, 25}) {
        const double ratio = moments(m, 20)[1] / moments(m, 5)[1];
        CHECK(ratio < 0.25 * 1.15);
        CHECK(ratio > 0.25 * 0.85);
    }
    IdealCoinTable t(3);
    CHECK(t.occurrences(5) == 0);
    CHECK_THROWS(t.record(0, Vector::Ones(2)));
}

TEST_CASE("checkpoint round trip") {
    Rng rng(8);
    const CoinFlipNet net = random_net(5, {32, 20}, 7, rng);
    std::stringstream ss;
    save_checkpoint(net, ss);
    const std::string text = ss.str();
    CHECK(text.rfind("copo-cfn 1\nlayers 3\nlayer 32 5\n", 0) == 0);
    const CoinFlipNet back = load_checkpoint(ss);
    CHECK(back.parameters() == net.parameters());
    std::stringstream bad("copo-cfn 2\n");
    CHECK_THROWS(load_checkpoint(bad));
    std::stringstream truncated(text.substr(0, text.size() / 2));
    CHECK_THROWS(load_checkpoint(truncated));
}
