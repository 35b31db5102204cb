// Deterministic RNG primitives. Every random object in the project is a pure
// function of a 64-bit key, and keys are derived hierarchically (parent key +
// child rank), so lazy, eager and pruned generation of the same seed agree
// bit for bit.
#pragma once

#include <cmath>
#include <cstdint>

namespace rwre {

inline constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer
inline uint64_t mix_fin(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Combine a key with a lane index (child rank, replica id, block counter).
inline uint64_t mix64(uint64_t key, uint64_t lane) {
  return mix_fin(key + kGolden * (lane + 1));
}

// Counter-based bit source: one 64-bit word per (seed, path, block). Used by
// the rw1d lattice kernels so scalar and SIMD variants consume identical bits.
inline uint64_t ctr_word(uint64_t seed, uint64_t path, uint64_t block) {
  return mix_fin(mix64(seed, path) ^ (kGolden * (block + 1)));
}

// splitmix64 stream
struct Stream {
  uint64_t state;
  explicit Stream(uint64_t seed) : state(seed) {}

  uint64_t next() {
    state += kGolden;
    return mix_fin(state);
  }

  // uniform in [0,1)
  double u01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // uniform in (0,1]
  double u01_pos() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

  // standard normal via Box-Muller (cosine branch only; deterministic and
  // portable across compilers, unlike std::normal_distribution)
  double normal() {
    double u1 = u01_pos();
    double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double var) {
    return mean + std::sqrt(var) * normal();
  }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) {
    // 64-bit multiply-shift; bias is negligible for the n used here (< 2^32)
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }
};

}  // namespace rwre
