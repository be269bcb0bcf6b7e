#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>

namespace ducseg {

/// Deterministic 64-bit pseudorandom generator (xorshift64*).
///
/// Seeding: the state is the SplitMix64 output for `seed`:
///
///     z = seed + 0x9E3779B97F4A7C15
///     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///     state = z ^ (z >> 31)        (replaced by 0x9E3779B97F4A7C15 if 0)
///
/// Step (all arithmetic modulo 2^64):
///
///     state ^= state >> 12
///     state ^= state << 25
///     state ^= state >> 27
///     return state * 0x2545F4914F6CDD1D
///
/// uniform() = (next() >> 11) * 2^-53, in [0, 1).
/// normal() uses one Box-Muller draw per call, no caching:
///     u1 = 1 - uniform(), u2 = uniform()
///     return sqrt(-2 ln u1) * cos(2 pi u2)
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed);

    std::uint64_t next();
    std::uint64_t operator()() { return next(); }
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, bound); bound must be > 0. Uses rejection sampling.
    std::uint64_t below(std::uint64_t bound);
    /// Uniform integer in [lo, hi] inclusive.
    long range(long lo, long hi);
    double normal();

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

}  // namespace ducseg
