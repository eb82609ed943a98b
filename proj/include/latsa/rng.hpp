#pragma once

#include <cstdint>
#include <limits>

namespace latsa {

/// Seedable, splittable generator built on SplitMix64 (Steele, Lea & Flood 2014).
///
/// The state advances by the golden-ratio increment 0x9E3779B97F4A7C15 and each
/// output is the state passed through the SplitMix64 finalizer. `split(key)`
/// derives an independent stream from the current state and a caller-chosen key
/// without advancing the parent, so per-sentence or per-step streams can be
/// derived in any order and still be reproducible.
///
/// Satisfies UniformRandomBitGenerator, so it also drives <random> distributions.
class Rng {
public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Rng split(std::uint64_t key) const;

  std::uint64_t state() const { return state_; }

private:
  std::uint64_t state_;
};

}  // namespace latsa
