#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace stimpute {

/// Deterministic xoshiro256++ generator with explicit substream derivation.
/// Every stochastic component of the pipeline draws from its own substream so
/// results are reproducible bit-for-bit regardless of evaluation order.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL;
        for (auto& s : state_) s = splitmix(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    long uniform_int(long lo, long hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<long>(next_u64() % span);
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Derive an independent substream keyed by a label and up to three indices.
    Rng substream(std::string_view label, std::uint64_t a = 0, std::uint64_t b = 0,
                  std::uint64_t c = 0) const {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (char ch : label) {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001B3ULL;
        }
        std::uint64_t x = state_[0] ^ h;
        x = mix(x ^ (a + 0x9E3779B97F4A7C15ULL));
        x = mix(x ^ (b + 0xBF58476D1CE4E5B9ULL));
        x = mix(x ^ (c + 0x94D049BB133111EBULL));
        return Rng(x);
    }

private:
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
    static std::uint64_t splitmix(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_[4];
};

}  // namespace stimpute
