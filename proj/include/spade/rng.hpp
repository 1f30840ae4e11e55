// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace spade {

/// xorshift64* generator.
///
/// State update (all arithmetic mod 2^64):
///   x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27;
///   out = x * 0x2545F4914F6CDD1D
///
/// Seeding runs the user seed through one splitmix64 round so that small
/// seeds (0, 1, 2, ...) give unrelated streams and the state is never zero.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    state_ = z == 0 ? 0x9E3779B97F4A7C15ULL : z;
  }

  std::uint64_t next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform in [0, 1) with 24 random bits; exact in float.
  float uniform24() { return static_cast<float>(next() >> 40) * 0x1.0p-24f; }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r;
    do {
      r = next();
    } while (r >= limit);
    return r % n;
  }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  /// Standard normal via Box-Muller (one value per call, the pair's second
  /// half is discarded so the stream position depends only on call count).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Approximately normal, zero mean, unit variance; Irwin-Hall sum of four
  /// 24-bit uniforms. Uses only +, -, * so results are bit-identical on any
  /// IEEE-754 platform.
  float irwin_hall() {
    constexpr float kScale = 1.7320508f;  // sqrt(12 / 4)
    const float s = uniform24() + uniform24() + uniform24() + uniform24();
    return (s - 2.0f) * kScale;
  }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s == 0 ? 0x9E3779B97F4A7C15ULL : s; }

 private:
  std::uint64_t state_ = 0;
};

}  // namespace spade
