#pragma once

// Portable seeded randomness. Every run owns one Xoshiro256ss stream seeded
// from seed_for(master, cell, agent), so results do not depend on scheduling.

#include <array>
#include <cstdint>
#include <limits>
#include <span>

namespace mibci {

/// SplitMix64 output finalizer. A bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derives the seed of one run.
///
///   key  = (cell << 32) | agent
///   seed = mix64(mix64(master) ^ key)
///
/// For a fixed master the map key -> seed is a bijection, so distinct
/// (cell, agent) pairs never collide as long as both fit in 32 bits. For a
/// fixed key the map master -> seed is also a bijection.
constexpr std::uint64_t seed_for(std::uint64_t master, std::uint32_t cell, std::uint32_t agent) {
  const std::uint64_t key = (static_cast<std::uint64_t>(cell) << 32) | agent;
  return mix64(mix64(master) ^ key);
}

/// xoshiro256** 1.0 (Blackman & Vigna). Satisfies UniformRandomBitGenerator.
class Xoshiro256ss {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256ss(std::uint64_t seed = 0) { reseed(seed); }

  /// Fills the state with successive SplitMix64 outputs.
  void reseed(std::uint64_t seed) {
    for (auto& word : s_) {
      seed += 0x9E3779B97F4A7C15ULL;
      word = mix64(seed);
    }
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<std::uint64_t, 4> s_{};
};

/// Inverse-CDF draw from a probability vector. Consumes exactly one uniform.
inline std::size_t sample_index(std::span<const double> probs, Xoshiro256ss& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = i;
    if (u < acc) return i;
  }
  // rounding left u above the accumulated mass
  return last_positive;
}

}  // namespace mibci
