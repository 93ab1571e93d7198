#pragma once

#include <cstdint>

namespace nbody {

/// SplitMix64 (Steele, Lea & Flood). Counter-based: state advances by a fixed
/// odd constant and each output is a bijective mix of the counter, so streams
/// are bit-identical on every platform. `split` derives an independent stream.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    return mix(state_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  constexpr double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  constexpr SplitMix64 split() { return SplitMix64(mix(next() ^ 0xD1B54A32D192ED03ull)); }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

}  // namespace nbody
