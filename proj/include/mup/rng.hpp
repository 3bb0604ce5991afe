#pragma once

// Seeded random streams. The engine is std::mt19937_64, whose output sequence
// is fixed by the standard; the conversions to real values are done here
// rather than through <random> distributions, whose algorithms are
// implementation-defined.

#include <cstdint>
#include <initializer_list>
#include <random>

#include "mup/kernels.hpp"

namespace mup {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from a base seed and a path of ids,
/// e.g. derive_seed(cfg.seed, {example_index}).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t s = mix64(base);
    for (std::uint64_t id : path) s = mix64(s ^ mix64(id + 0x632be59bd9b4e019ULL));
    return s;
}

class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    Real uniform() { return static_cast<Real>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n > 0.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller (one value per call, second discarded).
    Real normal();

   private:
    std::mt19937_64 engine_;
};

}  // namespace mup
