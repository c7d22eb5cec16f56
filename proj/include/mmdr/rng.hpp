#pragma once

#include <cmath>
#include <cstdint>

namespace mmdr {

// Portable seeded RNG (splitmix64 core). Used wherever replay determinism is
// part of a contract; std:: distributions are implementation-defined and
// would break cross-platform reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n); n > 0.
  std::uint64_t next_below(std::uint64_t n) {
    // Multiply-shift bound; bias is negligible for the ranges used here
    // (n << 2^64) and the mapping is fully portable.
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Standard normal via Box-Muller (deterministic, no cached spare).
  double normal() {
    double u1 = next_double(), u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

 private:
  std::uint64_t state_;
};

// Derives an independent stream from a base seed and stream labels.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  Rng mix(base ^ 0xA0761D6478BD642Full);
  std::uint64_t s = mix.next_u64();
  s ^= a * 0xE7037ED1A0B428DBull;
  s = (s ^ (s >> 29)) * 0x8EBC6AF09C88C6E3ull;
  s ^= b * 0x589965CC75374CC3ull;
  s = (s ^ (s >> 32)) * 0x1D8E4E27C47D124Full;
  s ^= c * 0xEB44ACCAB455D165ull;
  return s ^ (s >> 29);
}

}  // namespace mmdr
