#pragma once

// Portable seeded random numbers.
//
// SplitMix64 (Steele, Lea & Flood 2014) drives everything. Substreams are
// derived by hashing (seed, stream ids...) through the SplitMix64 finaliser,
// so image i of a batch does not depend on images 0..i-1. All derived
// quantities use only integer operations and IEEE-754 add/multiply/divide,
// which makes the output bit-identical across conforming platforms.
// std:: distributions are avoided because their algorithms are unspecified.

#include <cstdint>
#include <initializer_list>

namespace msseg {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    /// Independent generator for the stream identified by `ids`.
    static Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
        std::uint64_t h = mix(seed ^ 0x6a09e667f3bcc909ULL);
        for (auto id : ids) {
            h = mix(h ^ mix(id + 0x9e3779b97f4a7c15ULL));
        }
        return Rng(h);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    /// Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] (inclusive), unbiased by rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        auto const span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) {
            return static_cast<std::int64_t>(next_u64());
        }
        auto const limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t r = next_u64();
        while (r >= limit) {
            r = next_u64();
        }
        return lo + static_cast<std::int64_t>(r % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Approximately standard normal: Irwin-Hall sum of 12 uniforms minus 6.
    /// Bounded to [-6, 6]; no transcendental functions involved.
    double normal() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) {
            s += uniform();
        }
        return s - 6.0;
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Poisson by counting uniform arrivals: product of uniforms until it
    /// falls below exp(-mean). `exp_neg_mean` is passed in so callers can
    /// precompute it once.
    int poisson(double exp_neg_mean) {
        int k = 0;
        double p = uniform();
        while (p >= exp_neg_mean) {
            ++k;
            p *= uniform();
        }
        return k;
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

} // namespace msseg
