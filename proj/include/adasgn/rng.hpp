#pragma once

#include <cstdint>
#include <random>

namespace adasgn {

/// Seeded 64-bit Mersenne Twister. Every stochastic component takes one of
/// these explicitly; there is no global generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    std::uint64_t next() { return engine_(); }
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

    std::mt19937_64& engine() { return engine_; }

    // Independent child stream, stable for a given (seed, stream) pair.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
        Rng r(0);
        r.engine_.seed(seq);
        return r;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace adasgn
