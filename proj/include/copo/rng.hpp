#pragma once

#include <cstdint>
#include <random>

namespace copo {

// Seeded random stream. Draws are derived from raw mt19937_64 output with
// fixed transforms, so a seed yields the same sequence on every platform
// (std:: distributions are implementation-defined and are not used).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return seed_; }

    // Independent child stream; same (seed, stream_id) gives the same child.
    Rng split(std::uint64_t stream_id) const;

    std::uint64_t next_u64() { return engine_(); }
    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    // Uniform on (0, 1); never returns 0.
    double uniform_open();
    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_index(std::uint64_t n);
    double normal();
    double gumbel();
    bool bernoulli(double p) { return uniform() < p; }
    // Draw an index with probability proportional to weights[i].
    template <class Weights>
    int categorical(const Weights& weights) {
        double total = 0.0;
        for (int i = 0; i < static_cast<int>(weights.size()); ++i) total += weights[i];
        double u = uniform() * total;
        int last = static_cast<int>(weights.size()) - 1;
        for (int i = 0; i < last; ++i) {
            u -= weights[i];
            if (u < 0.0) return i;
        }
        return last;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace copo
