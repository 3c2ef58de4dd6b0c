#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "daclab/util.hpp"

namespace daclab {

// Counter-based random stream keyed by (root seed, label). Draw i is a pure
// function of (key, i), so streams derived from the same key are reproducible
// across runs, platforms and worker schedules. Integer arithmetic only.
class RandomStream {
 public:
  RandomStream() : key_(mix(0)) {}
  RandomStream(std::uint64_t root_seed, const std::string& label)
      : key_(mix(root_seed ^ fnv1a64(label))) {}

  // Independent child stream; the parent's counter is not advanced.
  RandomStream derive(const std::string& label) const {
    return RandomStream(Key{mix(key_ ^ fnv1a64(label))});
  }
  RandomStream derive(std::uint64_t index) const {
    return RandomStream(Key{mix(key_ ^ (index * 0x9e3779b97f4a7c15ull + 0x7f4a7c15ull))});
  }

  std::uint64_t next_u64() {
    std::uint64_t z = key_ + (++counter_) * 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1), 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    std::uint64_t r = std::uint64_t(uniform() * double(n));
    return r < n ? r : n - 1;
  }

  // Standard normal via Box-Muller (no cached spare, keeps draws counter-pure).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Beta(a,a) via Johnk's algorithm for the symmetric case used by CutMix.
  double beta_symmetric(double a) {
    if (a == 1.0) return uniform();
    for (int tries = 0; tries < 64; ++tries) {
      double x = std::pow(uniform(), 1.0 / a);
      double y = std::pow(uniform(), 1.0 / a);
      if (x + y <= 1.0 && x + y > 0.0) return x / (x + y);
    }
    return 0.5;
  }

 private:
  struct Key { std::uint64_t v; };
  explicit RandomStream(Key k) : key_(k.v) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace daclab
