#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace tabrec {

// Deterministic splitmix64 generator. The standard <random> distributions are
// implementation-defined, so every stochastic component in the project draws
// from this one to keep seeded runs byte-identical.
class Rng {
   public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    int range(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    bool chance(double p) { return uniform() < p; }

    // Box-Muller; the cached second value keeps draw counts predictable.
    double gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(t);
        has_cached_ = true;
        return r * std::cos(t);
    }

    // Standard Gumbel(0,1) via inverse CDF.
    double gumbel() {
        double u = uniform();
        while (u <= 1e-300) u = uniform();
        return -std::log(-std::log(u));
    }

    // Independent child stream, e.g. one per corpus sample.
    Rng child(uint64_t index) const {
        Rng mix(state_ ^ (0x632be59bd9b4e019ULL * (index + 1)));
        return Rng(mix.next_u64());
    }

    uint64_t state() const { return state_; }

   private:
    uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace tabrec
