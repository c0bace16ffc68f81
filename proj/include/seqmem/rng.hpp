#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace seqmem {

/// SplitMix64. Every random draw in the library goes through this generator so
/// that results are identical across platforms and standard libraries.
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one of the pair is discarded to keep the stream stateless.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Index in [0, n). Modulo reduction; bias is below 2^-40 for the sizes used here.
  std::uint64_t below(std::uint64_t n) { return next() % n; }

private:
  std::uint64_t state_;
};

/// Stateless hash of a tuple of keys, used for counter-based random decisions.
inline std::uint64_t hash_keys(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                               std::uint64_t d = 0) {
  SplitMix64 g(a);
  std::uint64_t h = g.next();
  for (std::uint64_t k : {b, c, d}) {
    SplitMix64 g2(h ^ (k * 0xd6e8feb86659fd93ULL));
    h = g2.next();
  }
  return h;
}

inline double hash_uniform(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                           std::uint64_t d = 0) {
  return static_cast<double>(hash_keys(a, b, c, d) >> 11) * 0x1.0p-53;
}

}  // namespace seqmem
