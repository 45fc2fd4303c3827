#pragma once
#include <complex>
#include <cstdint>
#include <cmath>
#include <string>
#include <string_view>

#include "nrpos/angles.hpp"

namespace nrpos {

// Deterministic randomness. One root seed per scenario; every consumer
// derives its own stream keyed by a purpose label plus a salt (typically the
// trial index), so adding a consumer never perturbs existing ones and the
// same (seed, label, salt) always reproduces the same draws, on any platform.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// xoshiro256** — small, fast, reproducible across platforms.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = detail::splitmix64(sm);
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

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Zero-mean Gaussian via Box-Muller (fully deterministic, no stdlib
  /// distribution dependence).
  double gaussian(double sigma) {
    if (sigma == 0.0) return 0.0;
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  /// Circular complex Gaussian with the given per-component sigma.
  std::complex<double> complex_gaussian(double sigma_per_component) {
    const double re = gaussian(sigma_per_component);
    const double im = gaussian(sigma_per_component);
    return {re, im};
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

/// Derive an independent stream for (root seed, purpose label, salt).
inline RandomStream derive_stream(std::uint64_t root_seed,
                                  std::string_view purpose,
                                  std::uint64_t salt = 0) {
  std::uint64_t state = root_seed;
  std::uint64_t a = detail::splitmix64(state);
  state ^= detail::fnv1a64(purpose);
  std::uint64_t b = detail::splitmix64(state);
  state ^= salt * 0xD1B54A32D192ED03ULL + 0x2545F4914F6CDD1DULL;
  std::uint64_t c = detail::splitmix64(state);
  return RandomStream(a ^ (b * 0x9E3779B97F4A7C15ULL) ^ c);
}

}  // namespace nrpos
