#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "nbody/physics.hpp"

namespace nbody {

inline constexpr int kKeyBits = 21;
inline constexpr std::uint32_t kKeyRange = 1u << kKeyBits;

/// Every coordinate lies in (-half_extent, half_extent).
struct DomainBounds {
  double half_extent = 1.0;
};

/// 63-bit Morton key; bit 3k+2 holds bit k of x, 3k+1 of y, 3k of z.
struct SpatialKey {
  std::uint64_t bits = 0;
  friend constexpr auto operator<=>(const SpatialKey&, const SpatialKey&) = default;
};

using Quantized = std::array<std::uint32_t, 3>;

/// Padded bounds: max |coordinate| times 1.001 (1.0 when every body sits at
/// the origin).
DomainBounds bounds_for(std::span<const Body> bodies);

/// floor((coord - lo) / side * 2^21) clamped to [0, 2^21 - 1]. Throws if the
/// coordinate lies outside [lo, lo + side).
std::uint32_t quantize_in(double coord, double lo, double side);

std::uint32_t quantize(double coord, DomainBounds bounds);
Quantized quantize(const Vec3& pos, DomainBounds bounds);

SpatialKey interleave(std::uint32_t xq, std::uint32_t yq, std::uint32_t zq);
inline SpatialKey interleave(const Quantized& q) { return interleave(q[0], q[1], q[2]); }
Quantized deinterleave(SpatialKey key);

/// One key per body, in body order.
std::vector<SpatialKey> keys_for(std::span<const Body> bodies, DomainBounds bounds);

/// Strict total order used by every decomposition: key, then body id.
struct KeyedBody {
  SpatialKey key;
  Body body;
};

inline bool key_less(const KeyedBody& a, const KeyedBody& b) {
  return a.key.bits != b.key.bits ? a.key.bits < b.key.bits : a.body.id < b.body.id;
}

}  // namespace nbody
