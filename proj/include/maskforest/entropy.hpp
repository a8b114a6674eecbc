#pragma once

#include <sys/random.h>

#include <cstddef>
#include <cstdint>
#include <stdexcept>

#include "maskforest/detrng.hpp"

namespace maskforest {

// Source of private (non-shared) randomness: Paillier key material and
// encryption nonces, per-client noise matrices, the auxiliary server's
// offset draw. Kept separate from RngStream on purpose: RngStream carries
// the consortium-shared seed and is reproducible by contract.
class EntropySource {
 public:
  virtual ~EntropySource() = default;
  virtual void fill(std::uint8_t* buf, std::size_t len) = 0;

  std::uint64_t draw_u64() {
    std::uint8_t b[8];
    fill(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
};

// Operating-system entropy; the default for all cryptographic draws.
class OsEntropy final : public EntropySource {
 public:
  void fill(std::uint8_t* buf, std::size_t len) override {
    while (len > 0) {
      const std::size_t chunk = len > 256 ? 256 : len;
      if (getentropy(buf, chunk) != 0) throw std::runtime_error("getentropy failed");
      buf += chunk;
      len -= chunk;
    }
  }
};

inline OsEntropy& os_entropy() {
  static OsEntropy src;
  return src;
}

// Deterministic byte expander for reproducible simulations. Selecting a
// fixed master seed trades semantic security for replayability; production
// use keeps OsEntropy.
class SeededEntropy final : public EntropySource {
 public:
  explicit SeededEntropy(std::uint64_t seed) : stream_(seed) {}

  void fill(std::uint8_t* buf, std::size_t len) override {
    while (len > 0) {
      std::uint64_t word = stream_.next_u64();
      for (int i = 0; i < 8 && len > 0; ++i, --len) {
        *buf++ = static_cast<std::uint8_t>(word & 0xFF);
        word >>= 8;
      }
    }
  }

 private:
  RngStream stream_;
};

}  // namespace maskforest
