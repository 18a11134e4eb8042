#include <benchmark/benchmark.h>

#include "copo/kernels.hpp"
#include "copo/rng.hpp"

using namespace copo;

namespace {

kernels::DeltaBatch make_batch(Eigen::Index n, int d) {
    Rng rng(1);
    kernels::DeltaBatch b{Matrix(n, d), Vector(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) b.rows(i, j) = rng.normal();
        b.weights[i] = 1.0 + rng.uniform_index(3);
    }
    return b;
}

Vector make_theta(int d) {
    Rng rng(2);
    Vector t(d);
    for (int j = 0; j < d; ++j) t[j] = rng.normal() / d;
    return t;
}

Eigen::LLT<Matrix> make_factor(const kernels::DeltaBatch& b) {
    const Matrix a = kernels::serial::weighted_gram(b) + Matrix::Identity(b.dim(), b.dim());
    return Eigen::LLT<Matrix>(a);
}

template <class Kernel>
void nll(benchmark::State& state, Kernel kernel) {
    const auto b = make_batch(state.range(0), static_cast<int>(state.range(1)));
    const Vector theta = make_theta(b.dim());
    for (auto _ : state) benchmark::DoNotOptimize(kernel(theta, b));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <class Kernel>
void gram(benchmark::State& state, Kernel kernel) {
    const auto b = make_batch(state.range(0), static_cast<int>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(kernel(b));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <class Kernel>
void quad(benchmark::State& state, Kernel kernel) {
    const auto b = make_batch(state.range(0), static_cast<int>(state.range(1)));
    const auto factor = make_factor(b);
    for (auto _ : state) benchmark::DoNotOptimize(kernel(b.rows, factor));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void shapes(benchmark::internal::Benchmark* b) {
    for (long n : {1000, 20000}) b->Args({n, 12})->Args({n, 64});
}

}  // namespace

BENCHMARK_CAPTURE(nll, serial, kernels::serial::logistic_nll)->Apply(shapes);
BENCHMARK_CAPTURE(nll, parallel, kernels::parallel::logistic_nll)->Apply(shapes);
BENCHMARK_CAPTURE(gram, serial, kernels::serial::weighted_gram)->Apply(shapes);
BENCHMARK_CAPTURE(gram, parallel, kernels::parallel::weighted_gram)->Apply(shapes);
BENCHMARK_CAPTURE(quad, serial, kernels::serial::quadratic_forms)->Apply(shapes);
BENCHMARK_CAPTURE(quad, parallel, kernels::parallel::quadratic_forms)->Apply(shapes);

BENCHMARK_MAIN();
