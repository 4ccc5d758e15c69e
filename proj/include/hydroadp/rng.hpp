#pragma once

#include <cstdint>
#include <vector>

namespace hydroadp {

/// Counter-free deterministic generator (xoshiro256++), seeded through
/// SplitMix64 so that nearby seeds give unrelated streams. All randomness in
/// the project flows through this type; streams are derived per task index so
/// results do not depend on thread scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();

  /// Uniform double in [0, 1), 53 mantissa bits.
  double uniform01();

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  /// Index drawn from the discrete distribution `probs` (need not be exactly
  /// normalized; the last category absorbs rounding slack).
  int categorical(const std::vector<double>& probs);

 private:
  std::uint64_t s_[4];
};

/// SplitMix64 finalizer; bijective 64-bit mix.
std::uint64_t mix64(std::uint64_t z);

/// Seed for a sub-stream identified by up to four indices. Deterministic,
/// collision-resistant for normal use (distinct tuples give distinct seeds
/// with overwhelming probability).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0,
                          std::uint64_t d = 0);

}  // namespace hydroadp
