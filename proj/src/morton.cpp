#include "nbody/morton.hpp"

#include <cmath>
#include <string>

#include "nbody/error.hpp"

namespace nbody {

namespace {

// Spread the low 21 bits of v so that bit k moves to bit 3k.
std::uint64_t spread3(std::uint64_t v) {
  v &= 0x1FFFFF;
  v = (v | (v << 32)) & 0x1F00000000FFFFull;
  v = (v | (v << 16)) & 0x1F0000FF0000FFull;
  v = (v | (v << 8)) & 0x100F00F00F00F00Full;
  v = (v | (v << 4)) & 0x10C30C30C30C30C3ull;
  v = (v | (v << 2)) & 0x1249249249249249ull;
  return v;
}

std::uint32_t compact3(std::uint64_t v) {
  v &= 0x1249249249249249ull;
  v = (v ^ (v >> 2)) & 0x10C30C30C30C30C3ull;
  v = (v ^ (v >> 4)) & 0x100F00F00F00F00Full;
  v = (v ^ (v >> 8)) & 0x1F0000FF0000FFull;
  v = (v ^ (v >> 16)) & 0x1F00000000FFFFull;
  v = (v ^ (v >> 32)) & 0x1FFFFF;
  return static_cast<std::uint32_t>(v);
}

}  // namespace

DomainBounds bounds_for(std::span<const Body> bodies) {
  double m = 0.0;
  for (const auto& b : bodies) {
    m = std::max({m, std::abs(b.position.x), std::abs(b.position.y), std::abs(b.position.z)});
  }
  return DomainBounds{m > 0.0 ? m * 1.001 : 1.0};
}

std::uint32_t quantize_in(double coord, double lo, double side) {
  const double t = (coord - lo) / side;
  if (!(t >= 0.0 && t < 1.0))
    throw Error("quantize: coordinate " + std::to_string(coord) + " out of bounds");
  const double scaled = std::floor(t * static_cast<double>(kKeyRange));
  if (scaled >= static_cast<double>(kKeyRange - 1)) return kKeyRange - 1;
  return static_cast<std::uint32_t>(scaled);
}

std::uint32_t quantize(double coord, DomainBounds bounds) {
  if (!(std::abs(coord) < bounds.half_extent))
    throw Error("quantize: coordinate " + std::to_string(coord) + " out of bounds");
  return quantize_in(coord, -bounds.half_extent, 2.0 * bounds.half_extent);
}

Quantized quantize(const Vec3& pos, DomainBounds bounds) {
  return {quantize(pos.x, bounds), quantize(pos.y, bounds), quantize(pos.z, bounds)};
}

SpatialKey interleave(std::uint32_t xq, std::uint32_t yq, std::uint32_t zq) {
  return SpatialKey{(spread3(xq) << 2) | (spread3(yq) << 1) | spread3(zq)};
}

Quantized deinterleave(SpatialKey key) {
  return {compact3(key.bits >> 2), compact3(key.bits >> 1), compact3(key.bits)};
}

std::vector<SpatialKey> keys_for(std::span<const Body> bodies, DomainBounds bounds) {
  std::vector<SpatialKey> keys;
  keys.reserve(bodies.size());
  for (const auto& b : bodies) keys.push_back(interleave(quantize(b.position, bounds)));
  return keys;
}

}  // namespace nbody
