#include "copo/loop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace copo {

namespace {

class Stopwatch {
public:
    explicit Stopwatch(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
    double elapsed_ms() const {
        if (!enabled_) return 0.0;
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    bool enabled_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace

Comparator::Comparator(const BanditEnv& env, const Policy& ref, double b)
    : pi_star(gibbs_policy(reward_table(env), ref, b)), beta(b), pi_ref(ref) {
    value = true_value(env, pi_star, beta, pi_ref);
}

double suboptimality(const BanditEnv& env, const Comparator& comparator, const Policy& policy) {
    return comparator.value - true_value(env, policy, comparator.beta, comparator.pi_ref);
}

double suboptimality(const BanditEnv& env, const Policy& policy, double beta, const Policy& pi_ref) {
    return suboptimality(env, Comparator(env, pi_ref, beta), policy);
}

std::vector<PreferencePair> make_seed_dataset(const BanditEnv& env, int num_pairs, double coverage, Rng& rng) {
    if (!(coverage > 0.0 && coverage <= 1.0)) throw std::invalid_argument("coverage must lie in (0, 1]");
    const int ny = env.num_responses();
    const int covered = std::clamp(static_cast<int>(std::lround(coverage * ny)), 2, ny);
    std::vector<std::vector<ResponseId>> subsets(static_cast<std::size_t>(env.num_prompts()));
    for (auto& s : subsets) {
        std::vector<ResponseId> ids(static_cast<std::size_t>(ny));
        std::iota(ids.begin(), ids.end(), 0);
        for (int i = 0; i < covered; ++i) {
            const auto j = static_cast<std::size_t>(i) + rng.uniform_index(static_cast<std::uint64_t>(ny - i));
            std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
        }
        s.assign(ids.begin(), ids.begin() + covered);
    }
    std::vector<PreferencePair> out;
    out.reserve(static_cast<std::size_t>(num_pairs));
    for (int i = 0; i < num_pairs; ++i) {
        const PromptId x = rng.categorical(env.rho);
        const auto& s = subsets[static_cast<std::size_t>(x)];
        const auto a = rng.uniform_index(s.size());
        auto b = rng.uniform_index(s.size() - 1);
        if (b >= a) ++b;
        out.push_back(sample_preference(env, x, s[a], s[b], rng));
    }
    return out;
}

CopoRun run_copo(const BanditEnv& env, const Policy& pi_sft, const LoopConfig& config,
                 const std::vector<PreferencePair>& seed, Rng& rng) {
    config.copo.validate();
    if (config.prompts_per_iter < 1) throw std::invalid_argument("loop.prompts_per_iter must be >= 1");
    if (config.iterations < 1) throw std::invalid_argument("loop.iterations must be >= 1");
    const std::size_t portions = seed.size() / static_cast<std::size_t>(config.prompts_per_iter);
    if (static_cast<std::size_t>(config.iterations) > portions)
        throw std::invalid_argument("loop.iterations exceeds the number of seed dataset portions");

    const int nx = env.num_prompts();
    const int ny = env.num_responses();
    Rng sample_rng = rng.split(1);
    Rng rank_rng = rng.split(2);
    Rng cfn_rng = rng.split(3);

    const Comparator comparator(env, pi_sft, config.copo.beta);
    ExactCounter counter(nx, ny);
    CfnArchitecture arch = config.cfn_arch;
    arch.d_state = env.features.dim();
    // The CFN is trained every run so a checkpoint exists; it only feeds the
    // objective when it is the bonus source. Its own rng stream keeps the
    // policy trajectory independent of it.
    CfnTrainer trainer(CoinFlipNet(arch, cfn_rng), config.cfn_train);
    CfnDataset cfn_data;

    CopoRun run;
    Policy current = pi_sft;
    Policy reference = pi_sft;
    std::size_t collected = 0;
    for (int t = 0; t < config.iterations; ++t) {
        const Stopwatch watch(config.record_wall_time);
        PreferenceDataset data(nx, ny);
        std::vector<PromptId> sampled_prompts;
        std::vector<ResponseId> sampled_responses;
        IterationReport report;
        report.t = t + 1;

        const auto begin = static_cast<std::size_t>(t) * static_cast<std::size_t>(config.prompts_per_iter);
        for (std::size_t i = begin; i < begin + static_cast<std::size_t>(config.prompts_per_iter); ++i) {
            const auto& entry = seed[i];
            const ResponseId y = sample_rng.categorical(reference.probabilities(entry.x));
            sampled_prompts.push_back(entry.x);
            sampled_responses.push_back(y);
            const ResponseId candidates[] = {y, entry.chosen, entry.rejected};
            std::vector<ResponseId> distinct(std::begin(candidates), std::end(candidates));
            std::sort(distinct.begin(), distinct.end());
            distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
            if (distinct.size() < 2) {
                ++report.skipped_prompts;
                continue;
            }
            const RankResult ranked = rank_candidates(env, entry.x, candidates, config.rank_noise, rank_rng);
            data.add({entry.x, ranked.best, ranked.worst});
        }
        for (const auto& p : data.pairs()) {
            counter.record(p.x, p.chosen);
            counter.record(p.x, p.rejected);
        }
        for (std::size_t i = 0; i < sampled_prompts.size(); ++i)
            run.cfn_stream.emplace_back(sampled_prompts[i], sampled_responses[i]);

        const CfnDataset fresh =
            build_cfn_dataset(sampled_prompts, sampled_responses, env.features, arch.d_coin, cfn_rng);
        cfn_data.insert(cfn_data.end(), fresh.begin(), fresh.end());
        if (config.cfn_reset) trainer.reset(arch, cfn_rng);
        trainer.train(cfn_data, cfn_rng);

        Matrix bonus;
        const Matrix count_bonus = count_bonus_table(counter, config.copo.lambda_bonus);
        switch (config.copo.bonus_source) {
            case BonusSource::ExactCount:
                bonus = count_bonus;
                break;
            case BonusSource::Cfn:
                bonus = cfn_bonus_table(trainer.net(), env.features, config.copo.lambda_bonus);
                break;
            case BonusSource::None:
                bonus = Matrix::Zero(nx, ny);
                break;
        }
        report.cfn_examples = cfn_data.size();

        if (!data.empty()) {
            current = optimize_copo(current, reference, config.copo, data, bonus, config.ascent).policy;
            report.dpo_loss = dpo_loss_and_grad(current, reference, config.copo.beta, data).value;
            // Without a bonus source the exact counts still describe coverage.
            report.mean_bonus = expected_bonus(
                current, data, config.copo.bonus_source == BonusSource::None ? count_bonus : bonus);
        }
        collected += data.size();
        report.dataset_size = collected;
        report.true_value = true_value(env, current, config.copo.beta, pi_sft);
        report.subopt_gap = comparator.value - report.true_value;
        report.wall_ms = watch.elapsed_ms();
        run.reports.push_back(report);
        run.iteration_data.push_back(std::move(data));
        if (config.moving_anchor) reference = current;
    }
    run.final_policy = current;
    run.cfn = trainer.net();
    return run;
}

double fit_loglog_slope(const std::vector<double>& values, std::size_t first, std::size_t last) {
    if (first < 1 || last > values.size() || last <= first) throw std::invalid_argument("bad slope window");
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double n = static_cast<double>(last - first + 1);
    for (std::size_t t = first; t <= last; ++t) {
        const double lx = std::log(static_cast<double>(t));
        const double ly = std::log(std::max(values[t - 1], 1e-300));
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double denom = n * sxx - sx * sx;
    return denom > 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
}

RegretReport run_regret_experiment(const BanditEnv& env, const Policy& pi_ref, const RegretConfig& config, Rng& rng) {
    if (config.iterations < 10) throw std::invalid_argument("regret experiment needs T >= 10");
    if (config.pairs_per_iter < 1) throw std::invalid_argument("pairs_per_iter must be >= 1");
    if (!(config.beta > 0.0)) throw std::invalid_argument("beta must be positive");
    const int nx = env.num_prompts();
    const int ny = env.num_responses();
    const Comparator comparator(env, pi_ref, config.beta);

    RegretReport report;
    const int d = env.features.dim();
    report.iota = std::log(1.0 + 4.0 * config.iterations / (d * config.confidence.lambda));
    PreferenceDataset data(nx, ny);
    Policy current = pi_ref;
    std::optional<Vector> warm;
    double cumulative = 0.0;
    for (int t = 1; t <= config.iterations; ++t) {
        const Stopwatch watch(config.record_wall_time);
        for (int k = 0; k < config.pairs_per_iter; ++k) {
            const PromptId x = rng.categorical(env.rho);
            const Vector p = current.probabilities(x);
            bool drawn = false;
            for (int tries = 0; tries < 100 && !drawn; ++tries) {
                const ResponseId y1 = rng.categorical(p);
                const ResponseId y2 = rng.categorical(p);
                if (y1 == y2) continue;
                data.add(sample_preference(env, x, y1, y2, rng));
                drawn = true;
            }
            if (!drawn) ++report.skipped_rounds;
        }

        double ucb = 0.0;
        double xi = 0.0;
        if (config.oracle) {
            current = gibbs_policy(reward_table(env), pi_ref, config.beta);
        } else if (!data.empty()) {
            RewardEstimate est =
                estimate_reward(data, env.features, config.confidence, GramScaling::Sum, config.mle, warm);
            warm = est.theta_hat.theta;
            current = maximize_optimistic(est, config.beta, pi_ref, env.features, env.rho, config.mode,
                                          config.optimizer);
            xi = est.xi;
            ucb = est.xi * ucb_expectation_norm(current, env.features, est.sigma, est.lambda(), env.rho);
        }
        const double gap = std::max(0.0, suboptimality(env, comparator, current));
        cumulative += gap;
        report.instant.push_back(gap);
        report.cumulative.push_back(cumulative);
        report.dataset_size.push_back(data.size());
        report.xi.push_back(xi);
        report.ucb_term.push_back(ucb);
        report.wall_ms.push_back(watch.elapsed_ms());
    }
    const auto T = static_cast<std::size_t>(config.iterations);
    report.slope = fit_loglog_slope(report.cumulative, T / 2, T);
    return report;
}

BoundCheck check_suboptimality_bound(const BanditEnv& env, const Policy& pi_ref, double beta, int n,
                                     const ConfidenceParams& confidence, OptimisticMode mode, Rng& rng) {
    if (n < 1) throw std::invalid_argument("bound check needs n >= 1");
    PreferenceDataset data(env.num_prompts(), env.num_responses());
    for (int i = 0; i < n; ++i) {
        const PromptId x = rng.categorical(env.rho);
        const auto a = static_cast<ResponseId>(rng.uniform_index(static_cast<std::uint64_t>(env.num_responses())));
        auto b = static_cast<ResponseId>(rng.uniform_index(static_cast<std::uint64_t>(env.num_responses() - 1)));
        if (b >= a) ++b;
        data.add(sample_preference(env, x, a, b, rng));
    }
    const RewardEstimate est = estimate_reward(data, env.features, confidence, GramScaling::Mean);
    const Policy pi_hat = maximize_optimistic(est, beta, pi_ref, env.features, env.rho, mode);
    BoundCheck out;
    out.gap = suboptimality(env, pi_hat, beta, pi_ref);
    out.xi = est.xi;
    out.bound = 2.0 * est.xi * ucb_expectation_norm(pi_hat, env.features, est.sigma, est.lambda(), env.rho);
    out.estimation_error = ellipsoid_distance(est.theta_hat.theta, env.theta_star.theta, est.sigma, est.lambda());
    out.confidence_event = out.estimation_error <= est.xi;
    return out;
}

}  // namespace copo
