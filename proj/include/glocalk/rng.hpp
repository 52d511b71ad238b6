#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace glocalk {

// Deterministic random source. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard, and all floating-point draws are derived
// here with explicit formulas rather than std:: distributions (which are
// implementation-defined). Identical seeds therefore give identical streams
// on every platform.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller, cosine branch only; consumes two draws per sample.
    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        const double u2 = uniform01();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        return mean + stddev * z;
    }

    // Uniform integer in [0, n). Rejection-free modulo is fine here: n is
    // tiny relative to 2^64, so the bias is far below any statistical test
    // the library runs, and the stream stays one-draw-per-call.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // Decorrelated child seed for a named sub-stream (splitmix64 finalizer).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

} // namespace glocalk
