#pragma once

// xoshiro256** with SplitMix64 seeding.
//
// Streams: Rng::stream(seed, a, b) derives an independent generator for an
// (a, b) coordinate, e.g. (kind, point index) or (frame, point index), by
// hashing the tuple through SplitMix64. Sampling routines below are written
// out explicitly so results are identical on every platform and compiler,
// which std::*_distribution does not guarantee.

#include <array>
#include <cstdint>

namespace dyn4d {

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; the spare value is cached.
  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_{false};
  double spare_{0.0};
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace dyn4d
