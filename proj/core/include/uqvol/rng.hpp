#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace uqvol {

/// Deterministic, splittable random stream (splitmix64 core, Box-Muller
/// normals). Used instead of <random> so that draws are identical across
/// compilers and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(mix(seed)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Random sign, +1 or -1.
  double sign() { return (next_u64() & 1ull) ? 1.0 : -1.0; }

  /// Child stream derived from the original seed and a key; independent of
  /// how many draws were made from this stream.
  Rng split(std::uint64_t key) const { return Rng(mix(seed_ ^ mix(key))); }

  /// Child stream keyed by a string (e.g. a parameter path).
  Rng split(std::string_view key) const {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (char c : key) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return split(h);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace uqvol
