// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace melmark {

// splitmix64 finalizer; used to derive independent stream seeds.
inline uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// Deterministic RNG: mt19937_64 core, explicit Box-Muller normals (cached
// spare), and seed-based stream splitting that does not depend on draw order.
class Rng {
 public:
  explicit Rng(uint64_t seed) : base_(seed), eng_(mix64(seed)) {}

  uint64_t base_seed() const { return base_; }

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] (inclusive), rejection-free for our ranges.
  int uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // Standard normal via Box-Muller; two values per transform, one cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Child stream `idx` derived from the base seed alone: two Rngs with equal
  // base seeds yield identical children regardless of what was drawn so far.
  Rng split(uint64_t idx) const { return Rng(mix64(base_ ^ mix64(idx + 1))); }

 private:
  uint64_t base_;
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace melmark
