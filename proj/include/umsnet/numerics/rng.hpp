#pragma once

#include <cstdint>

namespace umsnet {

// Counter-based generator. Draw number n (n = 1, 2, ...) of seed s is
//
//   z = s + n * 0x9E3779B97F4A7C15            (mod 2^64)
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   out = z ^ (z >> 31)
//
// i.e. the SplitMix64 output function evaluated at a Weyl-sequence state, so
// (seed, counter) fully determines every future draw on every platform.
// Floating-point draws are derived in docs/formats.md.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();

  // 53-bit uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n), n > 0, by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  // Box-Muller; consumes exactly two draws.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Normal truncated to [-2 stddev, 2 stddev] by resampling.
  double truncated_normal(double stddev);

  // Independent stream for a sub-task: seed derived from this generator's
  // seed and a tag; does not advance this generator.
  Rng fork(std::uint64_t tag) const;

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

}  // namespace umsnet
