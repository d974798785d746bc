#pragma once

// Deterministic pseudo-random streams. All randomness in the toolkit goes
// through this generator so that runs are bit-reproducible across platforms;
// the standard-library distributions are implementation-defined and are not
// used.

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace vaca {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Per-example stream seed: global_seed * 1e6 + example index.
inline std::uint64_t derived_seed(std::uint64_t global_seed, std::uint64_t index) {
  return global_seed * 1000000ULL + index;
}

// Order-sensitive combine for (seed, epoch, step, ...) style derivations.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2));
  std::uint64_t h = splitmix64(s);
  return h ^ b;
}

// xoshiro256** seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // Box-Muller; consumes exactly two uniforms per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Gamma(alpha, rate beta) by Marsaglia-Tsang; alpha < 1 uses the boost
  // Gamma(alpha + 1) * U^(1/alpha).
  double gamma(double alpha, double beta) {
    if (!(alpha > 0.0) || !(beta > 0.0))
      throw std::invalid_argument("Rng::gamma: alpha and beta must be positive");
    if (alpha < 1.0) {
      const double u = 1.0 - uniform();  // (0, 1], keeps pow finite
      return gamma(alpha + 1.0, beta) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = 1.0 - uniform();
      const double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v / beta;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v / beta;
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4];
};

}  // namespace vaca
