#pragma once

// Deterministic RNG. Hand-rolled distributions so streams are identical
// across standard library implementations.

#include <cmath>
#include <cstdint>

namespace sgtr {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // decorrelate nearby seeds
    next_u64();
    next_u64();
  }

  // Derive an independent stream, e.g. per sample index.
  static Rng derive(std::uint64_t seed, std::uint64_t index) {
    return Rng(seed * 0x9e3779b97f4a7c15ULL + index + 1);
  }

  std::uint64_t next_u64() {  // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }  // [0,1)

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive range
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (have_cached_) {
      have_cached_ = false;
      return mean + stddev * cached_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    cached_ = r * std::sin(th);
    have_cached_ = true;
    return mean + stddev * r * std::cos(th);
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace sgtr
