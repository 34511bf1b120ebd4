#pragma once

#include <cstdint>
#include <string_view>

namespace rankcount {

/// Deterministic random generator (xoshiro256++ seeded via splitmix64).
/// Self-contained so that streams are reproducible across platforms and
/// standard-library versions; std::normal_distribution and friends are
/// implementation-defined and would break byte-identical re-runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform double in [0, 1).
  double uniform();
  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi], inclusive. Unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller (no caching, two uniforms per draw).
  double normal();
  double normal(double mean, double stddev);

  /// Mixes a seed with a stream name and index into a new seed. Used to give
  /// every image-id / batch-index its own independent deterministic stream.
  static std::uint64_t derive(std::uint64_t seed, std::string_view stream,
                              std::uint64_t index = 0);
  static Rng stream(std::uint64_t seed, std::string_view name,
                    std::uint64_t index = 0);

 private:
  std::uint64_t state_[4];
};

}  // namespace rankcount
