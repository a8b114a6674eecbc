#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "maskforest/common.hpp"

namespace maskforest {

// SplitMix64 stream. All cross-client shared randomness (permutations, the
// masking matrix) flows through this generator so that independent parties
// seeded with the same integer derive bit-identical values on any platform.
// Copyable value; a copy forks the sequence. Not advanced concurrently.
struct RngStream {
  std::uint64_t state = 0;

  constexpr RngStream() = default;
  constexpr explicit RngStream(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64() {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 random bits; never returns 1.0.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // N(mu, sigma^2) via Box-Muller, cosine branch only (the sine mate is
  // discarded so one sample consumes exactly two draws of the stream).
  double gaussian(double mu, double sigma) {
    if (sigma < 0.0) throw std::invalid_argument("gaussian: sigma must be >= 0");
    const double u1 = uniform01();
    const double u2 = uniform01();
    // 1-u1 lies in (0,1], keeping the log finite.
    const double radius = std::sqrt(-2.0 * std::log(1.0 - u1));
    return mu + sigma * radius * std::cos(2.0 * std::numbers::pi * u2);
  }
};

// Fisher-Yates over 0..n-1, descending index, swap target drawn as
// next_u64() mod (i+1). Identical output for identical (n, seed) everywhere;
// modulo bias is negligible for n far below 2^64.
inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("permutation: n must be >= 1");
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  RngStream stream(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(stream.next_u64() % (i + 1));
    std::swap(out[i], out[j]);
  }
  return out;
}

}  // namespace maskforest
