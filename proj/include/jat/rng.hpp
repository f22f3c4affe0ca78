#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace jat {

// Deterministic, platform-independent RNG used everywhere seeds matter.
// SplitMix64 core; normal draws via Box-Muller so results do not depend on
// the standard library's distribution implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), n > 0. Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      const std::uint64_t v = next_u64();
      if (v >= threshold) return v % n;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      using std::swap;
      swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

// Stable seed derivation for sub-streams (per step, per sample, ...).
// Results are independent of evaluation order, so parallel batch
// construction cannot perturb training.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t h = mix64(base + 0x9e3779b97f4a7c15ULL);
  h = mix64(h ^ (a * 0xff51afd7ed558ccdULL + 0x2545f4914f6cdd1dULL));
  h = mix64(h ^ (b * 0xc4ceb9fe1a85ec53ULL + 0x9e3779b97f4a7c15ULL));
  return h;
}

}  // namespace jat
