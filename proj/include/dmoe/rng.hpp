#pragma once

// Deterministic random numbers. The core generator is std::mt19937_64, whose
// output sequence is fully specified by the standard, and every derived draw
// (uniform doubles, bounded ints, gaussians, shuffles) is built here from raw
// 64-bit words with explicit arithmetic. std::uniform_*_distribution and
// std::shuffle are never used: their sequences may differ between standard
// library implementations.

#include <cstdint>
#include <random>
#include <vector>

namespace dmoe {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased draw from {0, ..., n-1} by rejection.
    std::uint64_t index(std::uint64_t n);

    // Standard normal via Box-Muller, one spare cached.
    double gaussian();

    // Independent stream keyed by (seed, a, b); used so per-example work can
    // be reordered or parallelized without changing any draw.
    static Rng substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Fisher-Yates over 0..n-1.
std::vector<std::uint32_t> shuffled_indices(std::size_t n, Rng& rng);

// SplitMix64 finalizer; also used for stream keying and checksums of seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace dmoe
