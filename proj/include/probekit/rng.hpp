#pragma once

#include <cstdint>

namespace probekit {

/// Deterministic random source used everywhere randomness is needed.
///
/// Algorithm (pinned, version 1): SplitMix64. The state is a single 64-bit
/// counter advanced by the golden-ratio increment 0x9E3779B97F4A7C15 and
/// passed through the Stafford "Mix13" finalizer. Derived draws:
///   uniform()      (x >> 11) * 2^-53, in [0, 1)
///   normal()       Box-Muller on u1 = ((x1 >> 11) + 1) * 2^-53 and
///                  u2 = uniform(); the sine branch is discarded so the
///                  generator carries no cached state
///   below(n)       rejection sampling on the top bits, unbiased
///   split()        a child seeded with the next raw draw
///   derive(s, k)   independent stream k of seed s: Rng(mix(s ^ mix(k + 1)))
/// Changing any of these is a format break for synthesized banks and
/// checkpoints.
class Rng {
 public:
  static constexpr std::uint32_t kAlgorithmVersion = 1;

  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  static Rng derive(std::uint64_t seed, std::uint64_t stream);
  static std::uint64_t mix(std::uint64_t z);

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t below(std::uint64_t n);
  Rng split() { return Rng(next_u64()); }

  std::uint64_t state() const noexcept { return state_; }
  void set_state(std::uint64_t s) noexcept { state_ = s; }

  bool operator==(const Rng&) const = default;

 private:
  std::uint64_t state_;
};

}  // namespace probekit
