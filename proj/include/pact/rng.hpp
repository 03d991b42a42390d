// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random numbers. mt19937_64 has a pinned algorithm in the
// standard, but the std distributions do not, so every draw here goes
// through explicit arithmetic to stay bit-identical across platforms.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pact {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Mixes a base seed with stream coordinates (rank, epoch, ...) so that
/// parallel streams never collide.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t h = splitmix64(base);
  h = splitmix64(h ^ (a + 0x100000001b3ULL));
  h = splitmix64(h ^ (b + 0xcbf29ce484222325ULL));
  h = splitmix64(h ^ c);
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1) with 53 usable bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Uniform in [0, n).
  uint64_t index(uint64_t n) { return gen_() % n; }

  /// Standard normal via Box-Muller (one value per pair; no cached state).
  double gaussian() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  float uniform_float() { return static_cast<float>(uniform()); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace pact
