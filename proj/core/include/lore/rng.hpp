#pragma once

#include <bit>
#include <cstdint>

namespace lore {

// Counter-based deterministic random stream.
//
// Algorithm (pinned so results are bit-exact on every platform):
//   out_i = splitmix64_mix(seed + i * 0x9E3779B97F4A7C15)   for i = 1, 2, ...
// where splitmix64_mix is the finalizer from Steele et al.'s SplitMix64.
// Floating-point helpers below use only IEEE-754 +,-,*,/ and sqrt plus an
// internal polynomial log, so normal() is bit-exact across platforms too.
struct Rng {
    uint64_t seed = 0;
    uint64_t counter = 0;
    // Marsaglia polar caches the second variate.
    double spare = 0.0;
    bool has_spare = false;

    Rng() = default;
    explicit Rng(uint64_t s) : seed(s) {}

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    uint64_t next_u64() {
        counter += 1;
        return mix(seed + counter * 0x9E3779B97F4A7C15ULL);
    }

    // Uniform in [0,1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float uniform_f() { return static_cast<float>(uniform()); }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    uint64_t below(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t r = next_u64();
        while (r >= limit) r = next_u64();
        return r % n;
    }

    // Standard normal via the Marsaglia polar method. Uses det_log so the
    // variates do not depend on the platform's libm.
    double normal() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        for (;;) {
            const double u = 2.0 * uniform() - 1.0;
            const double v = 2.0 * uniform() - 1.0;
            const double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) {
                const double root = sqrt_ieee(-2.0 * det_log(s) / s);
                spare = v * root;
                has_spare = true;
                return u * root;
            }
        }
    }

    float normal_f() { return static_cast<float>(normal()); }

    // Independent substream; safe to hand to a worker task.
    Rng fork(uint64_t stream) const {
        return Rng(mix(seed ^ (0xD1B54A32D192ED03ULL + stream * 0x9E3779B97F4A7C15ULL)));
    }

    // ln(x) for finite x > 0 from bit-level mantissa/exponent split and an
    // atanh series. Max error ~1e-12 over the unit square, deterministic.
    static double det_log(double x) {
        uint64_t bits = std::bit_cast<uint64_t>(x);
        int e = static_cast<int>((bits >> 52) & 0x7FF) - 1023;
        double m = std::bit_cast<double>((bits & 0xFFFFFFFFFFFFFULL) | 0x3FF0000000000000ULL);
        if (m > 1.4142135623730951) {
            m *= 0.5;
            e += 1;
        }
        const double t = (m - 1.0) / (m + 1.0);
        const double t2 = t * t;
        double series = 1.0 / 13.0;
        series = series * t2 + 1.0 / 11.0;
        series = series * t2 + 1.0 / 9.0;
        series = series * t2 + 1.0 / 7.0;
        series = series * t2 + 1.0 / 5.0;
        series = series * t2 + 1.0 / 3.0;
        series = series * t2 + 1.0;
        constexpr double ln2 = 0.6931471805599453;
        return 2.0 * t * series + static_cast<double>(e) * ln2;
    }

  private:
    // IEEE-754 sqrt is exactly rounded, so std::sqrt is already bit-exact.
    static double sqrt_ieee(double x) { return __builtin_sqrt(x); }
};

}  // namespace lore
