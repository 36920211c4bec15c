#ifndef RWKVASR_RNG_HPP
#define RWKVASR_RNG_HPP

#include <cstdint>
#include <random>

namespace rwkvasr {

// One run-level generator drives initialization, dropout masks and data
// shuffling, in that documented order. Reproducibility contract: same seed,
// same call sequence, bit-identical stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }

    double normal(double mean, double stddev) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }

    // Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(gen_);
    }

    bool bernoulli(double p) { return std::bernoulli_distribution(p)(gen_); }

    std::mt19937_64& engine() { return gen_; }

    // Derive an independent child generator (per-utterance streams etc.).
    Rng fork() { return Rng(gen_()); }

private:
    std::mt19937_64 gen_;
};

}  // namespace rwkvasr

#endif
