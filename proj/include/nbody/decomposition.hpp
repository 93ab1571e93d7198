#pragma once

// Spatial partitioning of the Morton-ordered body list into contiguous zones
// of roughly equal work, serially and across ranks.

#include <cstdint>
#include <span>
#include <vector>

#include "nbody/morton.hpp"
#include "nbody/transport.hpp"
#include "nbody/wire.hpp"

namespace nbody {

/// Z[k] is the first index owned by rank k; Z[s] = N.
struct Partition {
  std::vector<std::size_t> z;

  int ranks() const { return static_cast<int>(z.size()) - 1; }
  std::size_t begin(int k) const { return z[static_cast<std::size_t>(k)]; }
  std::size_t end(int k) const { return z[static_cast<std::size_t>(k) + 1]; }
  std::size_t size(int k) const { return end(k) - begin(k); }
};

/// Greedy zones over W in order. Zone k closes at the first body where its
/// running work reaches sum(W)/s; the last zone takes the remainder. Zones
/// that never close are left empty at the end.
Partition costzones(std::span<const std::uint64_t> work, int s);

/// Sorts nearly ordered data in place using the strict key order.
void insertion_sort(std::vector<KeyedBody>& v);

/// 96-byte body records: id, mass, position, velocity, acceleration, work.
void write_body(ByteWriter& w, const Body& b);
Body read_body(ByteReader& r);
Bytes encode_bodies(std::span<const Body> bodies);
std::vector<Body> decode_bodies(std::span<const std::uint8_t> bytes);

Bytes encode_keyed(std::span<const KeyedBody> items);
std::vector<KeyedBody> decode_keyed(std::span<const std::uint8_t> bytes);

inline constexpr int kDefaultExchangeWidth = 64;

struct SortStats {
  std::size_t rounds = 0;  // exchange rounds including the final quiet one
};

/// Distributed neighbour-exchange sort. Each round every rank swaps its k
/// smallest items with the left neighbour and its k largest with the right
/// one, both sides keep their halves of the merged 2k, and the loop ends after
/// a round in which no rank changed. Needs at least 2k local items everywhere.
/// Uses tags `tag` and `tag + 1`.
SortStats parallel_sort(Comm& comm, std::vector<KeyedBody>& local, Tag tag, int k = kDefaultExchangeWidth);

struct CostzoneStats {
  double target = 0.0;
  std::size_t bodies_sent = 0;
  std::size_t bodies_received = 0;
};

/// One left-to-right sweep: rank k trims its work to the target by pushing a
/// suffix to rank k+1 or pulling a prefix from it. Global order is preserved.
/// Work estimates travel inside the bodies. Uses tags `tag` and `tag + 1`.
CostzoneStats parallel_costzones(Comm& comm, std::vector<KeyedBody>& local, Tag tag);

}  // namespace nbody
