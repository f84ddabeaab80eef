#pragma once

#include <cmath>
#include <cstdint>

namespace profusion {

// Deterministic random source used everywhere in the library.
//
// The generator is xoshiro256++ seeded through splitmix64, and uniform/normal
// variates are produced with fixed arithmetic (53-bit mantissa scaling and
// Box-Muller) instead of std::uniform_real_distribution, so the same seed
// yields the same stream on every platform and standard library.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed), split_count_(0) {
        std::uint64_t sm = seed;
        for (auto& si : s_) si = splitmix64(sm);
        have_spare_ = false;
        spare_ = 0.0;
    }

    std::uint64_t seed() const { return seed_; }

    // Raw 64-bit output.
    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer uniform on {0, ..., n-1} by rejection, bias-free.
    std::uint64_t below(std::uint64_t n) {
        // Largest multiple of n that fits in 64 bits; reject above it.
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller. Caches the second variate.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so the log is finite.
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Derived stream k. Streams from distinct k (and distinct parents) are
    // seeded through splitmix64 of (seed, split counter, k), so they never
    // share state with the parent.
    Rng split(std::uint64_t k) {
        std::uint64_t x = seed_;
        std::uint64_t h = splitmix64(x);
        x = h ^ (0x9E3779B97F4A7C15ULL + k);
        h = splitmix64(x);
        x = h ^ (++split_count_);
        return Rng(splitmix64(x));
    }

    static std::uint64_t splitmix64(std::uint64_t& state) {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t seed_;
    std::uint64_t s_[4];
    std::uint64_t split_count_;
    bool have_spare_;
    double spare_;
};

} // namespace profusion
