#include "doctest.h"

#include <cmath>

#include "copo/env.hpp"
#include "copo/policy.hpp"
#include "copo/reward.hpp"

using namespace copo;

namespace {

Matrix random_matrix(int r, int c, double scale, Rng& rng) {
    Matrix m(r, c);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

PreferenceDataset random_dataset(int nx, int ny, int n, Rng& rng) {
    PreferenceDataset d(nx, ny);
    for (int i = 0; i < n; ++i) {
        const int x = static_cast<int>(rng.uniform_index(nx));
        const int a = static_cast<int>(rng.uniform_index(ny));
        const int b = (a + 1 + static_cast<int>(rng.uniform_index(ny - 1))) % ny;
        d.add({x, a, b});
    }
    return d;
}

Matrix finite_difference(const std::function<double(const Policy&)>& f, const Policy& p, double h = 1e-5) {
    Matrix g(p.num_prompts(), p.num_responses());
    for (int i = 0; i < g.size(); ++i) {
        Matrix a = p.logits(), b = p.logits();
        a.data()[i] += h;
        b.data()[i] -= h;
        g.data()[i] = (f(Policy(a)) - f(Policy(b))) / (2 * h);
    }
    return g;
}

double rel_error(const Matrix& a, const Matrix& b) {
    return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

CopoConfig cfg(double alpha, double beta = 0.1, double lambda = 0.01) {
    CopoConfig c;
    c.alpha = alpha;
    c.beta = beta;
    c.lambda_bonus = lambda;
    return c;
}

RewardEstimate manual_estimate(const Vector& theta, const Matrix& sigma, double xi, double lambda) {
    RewardEstimate e;
    e.theta_hat = {theta, 10.0};
    e.sigma = sigma;
    e.n = 1;
    e.xi = xi;
    e.params.lambda = lambda;
    return e;
}

}  // namespace

TEST_CASE("config validation") {
    CHECK_NOTHROW(cfg(0.1).validate());
    CHECK_THROWS(cfg(-1.0).validate());
    CHECK_THROWS(cfg(0.1, 0.0).validate());
    CHECK_THROWS(cfg(0.1, 0.1, -0.5).validate());
}

TEST_CASE("Gibbs closed form") {
    Rng rng(1);
    const Policy ref(random_matrix(3, 4, 1.0, rng));
    CHECK((gibbs_policy(Matrix::Zero(3, 4), ref, 0.3).probability_table() - ref.probability_table())
              .cwiseAbs()
              .maxCoeff() < 1e-15);
    CHECK((gibbs_policy(Matrix::Constant(3, 4, 7.5), ref, 0.3).probability_table() - ref.probability_table())
              .cwiseAbs()
              .maxCoeff() < 1e-14);
    Matrix r = Matrix::Zero(1, 3);
    r(0, 1) = 1.0;
    CHECK(gibbs_policy(r, Policy::uniform(1, 3), 0.01).probabilities(0)[1] > 0.999);

    // Direct evaluation of pi_ref * exp(r / beta) / Z.
    const Matrix rewards = random_matrix(3, 4, 1.0, rng);
    const Policy g = gibbs_policy(rewards, ref, 0.5);
    const Vector logz = log_partition(rewards, ref, 0.5);
    for (int x = 0; x < 3; ++x) {
        const Vector w = ref.probabilities(x).array() * (rewards.row(x).transpose().array() / 0.5).exp();
        CHECK((g.probabilities(x) - w / w.sum()).cwiseAbs().maxCoeff() < 1e-14);
        CHECK(std::exp(logz[x]) == doctest::Approx(w.sum()).epsilon(1e-12));
        CHECK(g.probabilities(x).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("implicit reward") {
    Rng rng(2);
    const Policy ref(random_matrix(3, 4, 1.0, rng));
    CHECK(implicit_reward_table(ref, ref, 0.2).cwiseAbs().maxCoeff() == 0.0);
    const Matrix r = random_matrix(3, 4, 1.0, rng);
    const double beta = 0.2;
    const Policy g = gibbs_policy(r, ref, beta);
    const Vector logz = log_partition(r, ref, beta);
    for (int x = 0; x < 3; ++x) {
        for (int a = 0; a < 4; ++a) {
            CHECK(std::abs(implicit_reward(g, ref, beta, x, a) - (r(x, a) - beta * logz[x])) < 1e-10);
            for (int b = 0; b < 4; ++b)
                CHECK(std::abs(implicit_reward(g, ref, beta, x, a) - implicit_reward(g, ref, beta, x, b) -
                               (r(x, a) - r(x, b))) < 1e-10);
        }
    }
    const Matrix logits = random_matrix(3, 4, 2.0, rng);
    const Policy p(logits);
    for (int x = 0; x < 3; ++x) {
        const double lse_p = std::log(logits.row(x).array().exp().sum());
        const double lse_r = std::log(ref.logits().row(x).array().exp().sum());
        for (int y = 0; y < 4; ++y) {
            const double oracle = 0.7 * ((logits(x, y) - lse_p) - (ref.logits()(x, y) - lse_r));
            CHECK(std::abs(implicit_reward(p, ref, 0.7, x, y) - oracle) < 1e-12);
        }
    }
}

TEST_CASE("DPO loss and gradient") {
    Rng rng(3);
    const PreferenceDataset d = random_dataset(3, 4, 25, rng);
    const Policy ref(random_matrix(3, 4, 1.0, rng));
    CHECK(dpo_loss_and_grad(ref, ref, 0.1, d).value == doctest::Approx(25 * std::log(2.0)).epsilon(1e-14));

    PreferenceDataset one(1, 2);
    one.add({0, 0, 1});
    Matrix sep(1, 2);
    sep << 250.0, -250.0;  // beta * (500) = margin 50
    CHECK(dpo_loss_and_grad(Policy(sep), Policy::uniform(1, 2), 0.1, one).value < 1e-20);

    for (int trial = 0; trial < 50; ++trial) {
        const Policy p(random_matrix(3, 4, 1.0, rng));
        const double beta = 0.05 + rng.uniform();
        const auto lg = dpo_loss_and_grad(p, ref, beta, d);
        const Matrix fd =
            finite_difference([&](const Policy& q) { return dpo_loss_and_grad(q, ref, beta, d).value; }, p);
        CHECK(rel_error(lg.grad, fd) < 1e-5);
    }
    CHECK_THROWS(dpo_loss_and_grad(ref, ref, 0.1, PreferenceDataset(3, 4)));
}

TEST_CASE("COPO objective") {
    Rng rng(4);
    const PreferenceDataset d = random_dataset(3, 4, 30, rng);
    const Policy ref(random_matrix(3, 4, 1.0, rng));
    const Policy p(random_matrix(3, 4, 1.0, rng));
    ExactCounter counter(3, 4);
    for (const auto& pr : d.pairs()) {
        counter.record(pr.x, pr.chosen);
        counter.record(pr.x, pr.rejected);
    }
    const Matrix bonus = count_bonus_table(counter, 0.01);
    for (int x = 0; x < 3; ++x)
        for (int y = 0; y < 4; ++y)
            CHECK(bonus(x, y) == doctest::Approx(1.0 / std::sqrt(d.count(x, y) + 0.01)).epsilon(1e-15));

    CHECK(copo_objective(p, ref, cfg(0.0), d, bonus) == -dpo_loss_and_grad(p, ref, 0.1, d).value);

    const double n0 = 5.0;
    const Matrix flat = Matrix::Constant(3, 4, 1.0 / std::sqrt(n0 + 0.01));
    CHECK(copo_objective(p, ref, cfg(0.3), d, flat) + dpo_loss_and_grad(p, ref, 0.1, d).value ==
          doctest::Approx(0.3 / std::sqrt(n0 + 0.01)).epsilon(1e-12));

    // Double-loop oracle: sum_x (n_x / n) sum_y pi(y|x) bonus(x, y).
    double brute = 0.0;
    for (int x = 0; x < 3; ++x) {
        int nx = 0;
        for (const auto& pr : d.pairs()) nx += pr.x == x;
        for (int y = 0; y < 4; ++y) brute += (static_cast<double>(nx) / 30.0) * p.probabilities(x)[y] * bonus(x, y);
    }
    CHECK(expected_bonus(p, d, bonus) == doctest::Approx(brute).epsilon(1e-13));
    CHECK(copo_objective(p, ref, cfg(0.5), d, bonus) ==
          doctest::Approx(-dpo_loss_and_grad(p, ref, 0.1, d).value + 0.5 * brute).epsilon(1e-13));
}

TEST_CASE("COPO gradient") {
    Rng rng(5);
    const Policy ref(random_matrix(3, 4, 1.0, rng));
    SUBCASE("no bonus is the negative DPO gradient") {
        const PreferenceDataset d = random_dataset(3, 4, 20, rng);
        const Policy p(random_matrix(3, 4, 1.0, rng));
        const Matrix b = random_matrix(3, 4, 1.0, rng).cwiseAbs();
        CHECK(copo_gradient(p, ref, cfg(0.0), d, b) == -dpo_loss_and_grad(p, ref, 0.1, d).grad);
    }
    SUBCASE("uniform bonus has no policy gradient") {
        const PreferenceDataset d = random_dataset(3, 4, 20, rng);
        const Policy p(random_matrix(3, 4, 1.0, rng));
        const Matrix flat = Matrix::Constant(3, 4, 0.4);
        CHECK((copo_gradient(p, ref, cfg(2.0), d, flat) - copo_gradient(p, ref, cfg(0.0), d, flat))
                  .cwiseAbs()
                  .maxCoeff() < 1e-14);
    }
    SUBCASE("finite differences on random instances") {
        for (int trial = 0; trial < 50; ++trial) {
            const PreferenceDataset d = random_dataset(3, 4, 15, rng);
            const Policy p(random_matrix(3, 4, 1.0, rng));
            const Matrix b = random_matrix(3, 4, 1.0, rng).cwiseAbs();
            const CopoConfig c = cfg(rng.uniform() * 2.0, 0.05 + rng.uniform());
            const auto vg = copo_value_and_gradient(p, ref, c, d, b);
            CHECK(vg.value == copo_objective(p, ref, c, d, b));
            const Matrix fd = finite_difference([&](const Policy& q) { return copo_objective(q, ref, c, d, b); }, p);
            CHECK(rel_error(vg.grad, fd) < 1e-5);
        }
    }
    SUBCASE("importance-weighted estimator is unbiased") {
        const PreferenceDataset d = random_dataset(2, 3, 10, rng);
        const Policy ref2(random_matrix(2, 3, 0.5, rng));
        const Policy p(random_matrix(2, 3, 0.5, rng));
        const Matrix b = random_matrix(2, 3, 1.0, rng).cwiseAbs();
        const CopoConfig c = cfg(1.0, 0.5);
        const Matrix exact = copo_gradient(p, ref2, c, d, b);
        const Matrix dpo_part = copo_gradient(p, ref2, cfg(0.0, 0.5), d, b);
        const Matrix sampled = copo_gradient_sampled(p, ref2, c, d, b, 400000, rng);
        CHECK((sampled - exact).cwiseAbs().maxCoeff() < 0.02 * (exact - dpo_part).cwiseAbs().maxCoeff() + 1e-12);
        CHECK(copo_gradient_sampled(p, ref2, cfg(0.0, 0.5), d, b, 3, rng) == dpo_part);
    }
}

TEST_CASE("COPO ascent") {
    Rng rng(6);
    const Policy ref = Policy::uniform(3, 4);
    SUBCASE("without a bonus it beats random policies on DPO loss") {
        const PreferenceDataset d = random_dataset(3, 4, 20, rng);
        const AscentResult res = optimize_copo(ref, ref, cfg(0.0), d, Matrix::Zero(3, 4));
        const double best = dpo_loss_and_grad(res.policy, ref, 0.1, d).value;
        for (int i = 0; i < 100; ++i)
            CHECK(best <= dpo_loss_and_grad(Policy(random_matrix(3, 4, 3.0, rng)), ref, 0.1, d).value);
        for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i] >= res.trace[i - 1]);
    }
    SUBCASE("a huge bonus sends mass to the least counted response") {
        const PreferenceDataset d = random_dataset(3, 4, 30, rng);
        ExactCounter counter(3, 4);
        for (const auto& pr : d.pairs()) {
            counter.record(pr.x, pr.chosen);
            counter.record(pr.x, pr.rejected);
        }
        const Matrix b = count_bonus_table(counter, 0.01);
        const AscentResult res = optimize_copo(ref, ref, cfg(1000.0), d, b);
        for (int x = 0; x < 3; ++x) {
            if (d.prompt_weights()[x] == 0.0) continue;
            int argmax = 0;
            res.policy.probabilities(x).maxCoeff(&argmax);
            std::int64_t fewest = counter.count(x, 0);
            for (int y = 1; y < 4; ++y) fewest = std::min(fewest, counter.count(x, y));
            CHECK(counter.count(x, argmax) == fewest);
        }
        CHECK(res.trace.back() >= res.trace.front() - 1e-12);
    }
    SUBCASE("zero step budget returns the start") {
        const PreferenceDataset d = random_dataset(3, 4, 10, rng);
        const Policy start(random_matrix(3, 4, 1.0, rng));
        AscentOptions opts;
        opts.max_steps = 0;
        const AscentResult res = optimize_copo(start, ref, cfg(0.1), d, Matrix::Ones(3, 4), opts);
        CHECK(res.policy.logits() == start.logits());
        CHECK(res.steps == 0);
    }
    SUBCASE("larger alpha never lowers the expected bonus") {
        for (int inst = 0; inst < 5; ++inst) {
            const PreferenceDataset d = random_dataset(3, 4, 12, rng);
            ExactCounter counter(3, 4);
            for (const auto& pr : d.pairs()) {
                counter.record(pr.x, pr.chosen);
                counter.record(pr.x, pr.rejected);
            }
            const Matrix b = count_bonus_table(counter, 0.01);
            double previous = -1.0;
            for (double alpha : {0.0, 0.01, 0.1, 0.5}) {
                const Policy p = optimize_copo(ref, ref, cfg(alpha), d, b).policy;
                const double eb = expected_bonus(p, d, b);
                CHECK(eb >= previous - 1e-9);
                previous = eb;
            }
        }
    }
}

TEST_CASE("Gibbs policy maximizes the KL-regularized objective") {
    Rng rng(7);
    for (int inst = 0; inst < 5; ++inst) {
        const Matrix r = random_matrix(3, 4, 1.0, rng);
        const Policy ref(random_matrix(3, 4, 0.5, rng));
        const Vector rho = uniform_distribution(3);
        const double beta = 0.2 + rng.uniform();
        const Policy g = gibbs_policy(r, ref, beta);
        const double best = kl_regularized_value(r, rho, g, beta, ref);
        for (int i = 0; i < 100; ++i)
            CHECK(kl_regularized_value(r, rho, Policy(random_matrix(3, 4, 2.0, rng)), beta, ref) <= best);
        AscentOptions opts;
        opts.max_steps = 20000;
        opts.tolerance = 1e-10;
        const AscentResult res = ascend_logits(
            [&](const Policy& p) { return kl_objective_and_gradient(r, rho, p, beta, ref); }, ref, opts);
        CHECK(std::abs(res.trace.back() - best) < 1e-6);
        const auto kg = kl_objective_and_gradient(r, rho, ref, beta, ref);
        const Matrix fd =
            finite_difference([&](const Policy& p) { return kl_regularized_value(r, rho, p, beta, ref); }, ref);
        CHECK(rel_error(kg.grad, fd) < 1e-5);
    }
}

TEST_CASE("optimistic value") {
    Rng rng(8);
    const FeatureMap f = build_feature_map(FeatureKind::Linear, 3, 4, 5, rng);
    const Vector rho = uniform_distribution(3);
    const Policy ref = Policy::uniform(3, 4);
    const Vector theta = project_to_theta_b(Vector::Random(5), 1.0).theta;
    const Matrix rhat = reward_table(f, theta);
    const Policy p(random_matrix(3, 4, 1.0, rng));
    const double beta = 0.3;
    const Matrix a = random_matrix(5, 5, 1.0, rng);
    const Matrix sigma = a * a.transpose();

    const RewardEstimate zero_xi = manual_estimate(theta, sigma, 0.0, 2.0);
    CHECK(optimistic_value(p, zero_xi, beta, ref, f, rho) == kl_regularized_value(rhat, rho, p, beta, ref));

    const RewardEstimate ident = manual_estimate(theta, Matrix::Zero(5, 5), 0.7, 1.0);
    CHECK(optimistic_value(p, ident, beta, ref, f, rho) ==
          doctest::Approx(kl_regularized_value(rhat, rho, p, beta, ref) +
                          0.7 * feature_expectation(p, f, rho).norm())
              .epsilon(1e-13));

    const RewardEstimate e = manual_estimate(theta, sigma, 1.3, 0.5);
    const double composed =
        kl_regularized_value(rhat, rho, p, beta, ref) + 1.3 * ucb_expectation_norm(p, f, sigma, 0.5, rho);
    CHECK(optimistic_value(p, e, beta, ref, f, rho) == doctest::Approx(composed).epsilon(1e-13));
    CHECK(optimistic_value(p, e, beta, ref, f, rho) >= kl_regularized_value(rhat, rho, p, beta, ref));

    const auto vg = optimistic_value_and_gradient(p, e, beta, ref, f, rho);
    CHECK(vg.value == doctest::Approx(composed).epsilon(1e-13));
    const Matrix fd =
        finite_difference([&](const Policy& q) { return optimistic_value(q, e, beta, ref, f, rho); }, p);
    CHECK(rel_error(vg.grad, fd) < 1e-5);
}

TEST_CASE("optimistic maximization") {
    Rng rng(9);
    const Vector rho2 = uniform_distribution(2);
    SUBCASE("no optimism gives the Gibbs policy in both modes") {
        const FeatureMap f = build_feature_map(FeatureKind::Linear, 2, 3, 4, rng);
        const Vector theta = project_to_theta_b(Vector::Random(4), 1.0).theta;
        const Policy ref = Policy::uniform(2, 3);
        const RewardEstimate e = manual_estimate(theta, Matrix::Identity(4, 4), 0.0, 1.0);
        const Matrix g = gibbs_policy(reward_table(f, theta), ref, 0.2).probability_table();
        for (auto mode : {OptimisticMode::ExactNorm, OptimisticMode::PointwiseBonus})
            CHECK((maximize_optimistic(e, 0.2, ref, f, rho2, mode).probability_table() - g).cwiseAbs().maxCoeff() <
                  1e-12);
    }
    SUBCASE("equal counts shift the partition function only") {
        Rng r0(0);
        const FeatureMap f = build_feature_map(FeatureKind::Tabular, 2, 3, 0, r0);
        const Vector theta = project_to_theta_b(Vector::Random(6), 1.0).theta;
        const Policy ref = Policy::uniform(2, 3);
        const RewardEstimate e = manual_estimate(theta, 5.0 * Matrix::Identity(6, 6), 0.8, 1.0);
        const Matrix g = gibbs_policy(reward_table(f, theta), ref, 0.2).probability_table();
        CHECK((maximize_optimistic(e, 0.2, ref, f, rho2, OptimisticMode::PointwiseBonus).probability_table() - g)
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
    }
    SUBCASE("exact-norm optimum beats random search") {
        for (int inst = 0; inst < 5; ++inst) {
            const FeatureMap f = build_feature_map(FeatureKind::Linear, 2, 3, 4, rng);
            const Vector theta = project_to_theta_b(Vector::Random(4), 1.0).theta;
            const Policy ref = Policy::uniform(2, 3);
            const Matrix a = random_matrix(4, 4, 1.0, rng);
            const RewardEstimate e = manual_estimate(theta, a * a.transpose(), 1.0 + rng.uniform(), 0.5);
            const double beta = 0.1 + 0.3 * rng.uniform();
            const Policy best = maximize_optimistic(e, beta, ref, f, rho2, OptimisticMode::ExactNorm);
            const Policy pw = maximize_optimistic(e, beta, ref, f, rho2, OptimisticMode::PointwiseBonus);
            const double v = optimistic_value(best, e, beta, ref, f, rho2);
            CHECK(v >= optimistic_value(pw, e, beta, ref, f, rho2) - 1e-12);
            for (int i = 0; i < 1000; ++i)
                CHECK(optimistic_value(Policy(random_matrix(2, 3, 2.0, rng)), e, beta, ref, f, rho2) <= v + 1e-12);
        }
    }
    SUBCASE("optimism holds when the true parameter is in the confidence set") {
        const FeatureMap f = build_feature_map(FeatureKind::Linear, 2, 3, 4, rng);
        const Vector theta_star = project_to_theta_b(Vector::Random(4), 1.0).theta;
        const Vector theta_hat = theta_star + 0.3 * Vector::Random(4);
        const Matrix a = random_matrix(4, 4, 1.0, rng);
        const Matrix sigma = a * a.transpose();
        // Radius chosen to contain theta_star.
        const double xi = ellipsoid_distance(theta_hat, theta_star, sigma, 0.5) * 1.01;
        const RewardEstimate e = manual_estimate(theta_hat, sigma, xi, 0.5);
        const Policy ref = Policy::uniform(2, 3);
        const Matrix r_star = reward_table(f, theta_star);
        for (int i = 0; i < 200; ++i) {
            const Policy p(random_matrix(2, 3, 2.0, rng));
            CHECK(optimistic_value(p, e, 0.2, ref, f, rho2) >= kl_regularized_value(r_star, rho2, p, 0.2, ref) - 1e-12);
        }
    }
}

TEST_CASE("tabular count identity") {
    Rng rng(10);
    SUBCASE("no data: both sides are 1 / sqrt(lambda)") {
        const FeatureMap f = build_feature_map(FeatureKind::Tabular, 1, 2, 0, rng);
        const auto eq = tabular_ucb_equivalence_check(Policy::uniform(1, 2), PreferenceDataset(1, 2), f, 4.0,
                                                      Vector::Ones(1));
        CHECK(eq.norm_form == doctest::Approx(0.5));
        CHECK(eq.count_form == doctest::Approx(0.5));
    }
    SUBCASE("point mass on a pair counted three times") {
        const FeatureMap f = build_feature_map(FeatureKind::Tabular, 1, 3, 0, rng);
        PreferenceDataset d(1, 3);
        d.add({0, 1, 0});
        d.add({0, 2, 1});
        d.add({0, 1, 2});
        Matrix logits = Matrix::Constant(1, 3, -800.0);
        logits(0, 1) = 0.0;
        const auto eq = tabular_ucb_equivalence_check(Policy(logits), d, f, 1.0, Vector::Ones(1));
        CHECK(eq.norm_form == doctest::Approx(0.5).epsilon(1e-14));
        CHECK(eq.count_form == doctest::Approx(0.5).epsilon(1e-14));
    }
    SUBCASE("random instances") {
        const FeatureMap f = build_feature_map(FeatureKind::Tabular, 3, 4, 0, rng);
        const PreferenceDataset d = random_dataset(3, 4, 50, rng);
        const Policy p(random_matrix(3, 4, 1.0, rng));
        const auto eq = tabular_ucb_equivalence_check(p, d, f, 0.01, uniform_distribution(3));
        CHECK(std::abs(eq.norm_form - eq.count_form) < 1e-10);
        // Brute force count side.
        double brute = 0.0;
        for (int x = 0; x < 3; ++x)
            for (int y = 0; y < 4; ++y) brute += p.probabilities(x)[y] / 3.0 / std::sqrt(d.count(x, y) + 0.01);
        CHECK(eq.count_form == doctest::Approx(brute).epsilon(1e-13));
    }
    const FeatureMap lin = build_feature_map(FeatureKind::Linear, 2, 2, 3, rng);
    CHECK_THROWS(tabular_ucb_equivalence_check(Policy::uniform(2, 2), PreferenceDataset(2, 2), lin, 1.0,
                                               uniform_distribution(2)));
}
