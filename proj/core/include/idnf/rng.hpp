#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace idnf {

// Deterministic random source. All distribution transforms are spelled out
// here instead of using <random> distributions, whose output is
// implementation-defined; this pins every sampled bit to the seed so that
// checkpoints and datasets reproduce byte-identically on any platform.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t raw() { return eng_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0,1]: guards log(0).
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // +1 or -1 with equal probability.
  double rademacher() { return (eng_() & 1u) ? 1.0 : -1.0; }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection-free modulo is biased for huge n; n here is always small
    // (dataset cells, indices), where the bias is ~2^-60.
    return eng_() % n;
  }

  // Derives an independent stream for a named purpose (data/test/init/...).
  RandomSource fork(std::uint64_t stream_id) const {
    return RandomSource(mix(seed_, stream_id));
  }

  std::string serialize() const;
  static RandomSource deserialize(const std::string& blob);

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream_id) {
    // splitmix64 finalizer over seed + stream offset.
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream_id + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace idnf
