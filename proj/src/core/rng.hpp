#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace md {

// Deterministic random source. std::mt19937_64 has a fully specified output
// sequence; the distributions below are implemented by hand because the
// standard library distribution objects are implementation-defined and would
// break byte-for-byte reproducibility guarantees across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  int64_t uniform_int(int64_t n) {
    // Modulo bias is negligible for the desk-scale ranges used here (n << 2^64).
    return static_cast<int64_t>(engine_() % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller. Consumes exactly two engine draws.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Derives an independent stream, e.g. one per scene or per parameter block.
  static uint64_t mix(uint64_t seed, uint64_t stream) {
    // splitmix64 finalizer over the combined state
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace md
