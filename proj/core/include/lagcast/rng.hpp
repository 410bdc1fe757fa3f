/**
 * @file rng.hpp
 * @brief Deterministic random number generation.
 *
 * A small self-contained generator (splitmix64 seeding + xoshiro256**) is used
 * everywhere instead of <random> distributions so that sampled streams are
 * reproducible bit-for-bit across standard library implementations.
 */
#pragma once

#include <cmath>
#include <cstdint>

namespace lagcast {

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        // splitmix64 expansion of the seed into the xoshiro state
        std::uint64_t x = seed;
        for (auto& si : s_) {
            x += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            si = z ^ (z >> 31);
        }
        has_gauss_ = false;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller (cached pair).
    double gaussian() {
        if (has_gauss_) {
            has_gauss_ = false;
            return gauss_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        gauss_ = r * std::sin(a);
        has_gauss_ = true;
        return r * std::cos(a);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    /// Derive an independent child stream, e.g. per epoch or per sequence.
    Rng fork(std::uint64_t salt) {
        return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL));
    }

    /// Fisher-Yates shuffle with this generator.
    template <typename Container>
    void shuffle(Container& c) {
        for (std::size_t i = c.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(c[i - 1], c[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::uint64_t s_[4] = {};
    bool has_gauss_ = false;
    double gauss_ = 0.0;
};

}  // namespace lagcast
