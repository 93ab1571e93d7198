#pragma once

// Linear octree stored in a chained hash table keyed by hierarchical octal
// keys, plus the branch-node exchange that makes per-rank trees agree.

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "nbody/morton.hpp"
#include "nbody/octree.hpp"
#include "nbody/physics.hpp"
#include "nbody/transport.hpp"

namespace nbody {

using HKey = std::uint64_t;
inline constexpr HKey kRootKey = 1;

/// (k << 3) | i. Throws when the child would be deeper than the key resolution.
HKey child_key(HKey k, int i);
/// k >> 3. Throws for the root.
HKey parent_key(HKey k);
/// (bit length - 1) / 3.
int key_level(HKey k);
/// Octant index of `k` within its parent.
inline int key_octant(HKey k) { return static_cast<int>(k & 7u); }
/// Key of the level-`level` cell containing a body with Morton key `k`.
HKey body_key_to_cell_key(SpatialKey k, int level);
/// Centre and side of the cell `k` inside the given root cube.
std::pair<Vec3, double> cell_geometry(HKey k, const Vec3& root_centre, double root_side);

/// Owner value for cells whose subtree lives on this rank.
inline constexpr int kLocal = -1;

struct HashedCell {
  HKey key = kRootKey;
  Vec3 centre;
  double side = 0.0;
  MassMoments moments;
  LeafBody body;                     // leaves only
  std::uint8_t child_mask = 0;
  std::uint64_t count = 0;           // bodies below, neighbour bodies included
  std::uint32_t neighbour_count = 0; // neighbour bodies below
  int owner = kLocal;
  bool children_local = true;        // false until a remote cell's children arrive
  bool requested = false;            // a child request is outstanding

  bool is_leaf() const { return child_mask == 0; }
  bool has_child(int i) const { return (child_mask >> i) & 1u; }
};

class HashedTree {
 public:
  static constexpr std::size_t kInitialBuckets = 4096;

  HashedTree(const Vec3& root_centre, double root_side, std::size_t initial_buckets = kInitialBuckets);

  /// Throws "key collision" if the key is already present.
  HashedCell& insert(const HashedCell& cell);
  HashedCell* find(HKey key);
  const HashedCell* find(HKey key) const;
  bool contains(HKey key) const { return find(key) != nullptr; }

  std::size_t size() const { return count_; }
  std::size_t bucket_count() const { return heads_.size(); }
  /// Mean number of chain links visited by a successful lookup.
  double mean_probe_length() const;

  /// Adds a body below the root, splitting leaves until it is alone.
  /// Neighbour bodies only shape the tree; they never enter moments.
  void insert_body(const Body& body, bool neighbour = false);

  /// Bottom-up moments for every cell whose children are local. Cells with
  /// remote children keep the moments they arrived with.
  void compute_moments();

  const Vec3& root_centre() const { return centre_; }
  double root_side() const { return side_; }
  LeafBody make_leaf_body(const Body& body) const;

  void for_each(const std::function<void(const HashedCell&)>& fn) const;
  std::vector<HKey> keys() const;

 private:
  struct Node {
    HashedCell cell;
    std::int64_t next = -1;
  };

  std::size_t bucket(HKey key) const { return static_cast<std::size_t>(key) & (heads_.size() - 1); }
  void grow();
  HashedCell make_leaf(HKey key, const Vec3& centre, double side, const LeafBody& body, bool neighbour) const;

  Vec3 centre_;
  double side_;
  std::vector<std::int64_t> heads_;
  std::vector<Node> nodes_;
  std::size_t count_ = 0;
};

/// Coarsest cells below the root that contain no neighbour body, in
/// depth-first octant order. With no neighbour bodies this is the root.
std::vector<HKey> branch_nodes(const HashedTree& tree);

/// Wire form of one cell: key then the octree cell record.
void write_hashed_cell(ByteWriter& w, const HashedCell& c);
HashedCell read_hashed_cell(ByteReader& r);

struct DistributeStats {
  std::vector<HKey> own_branches;
  std::size_t remote_branches = 0;
  std::size_t top_cells = 0;
};

/// Turns the local tree of a Morton-contiguous partition into this rank's view
/// of the global tree. `local` must be non-empty and in key order. Steps:
/// exchange boundary bodies with the linear neighbours and insert them, find
/// the branch nodes, broadcast every rank's branch nodes in rank order, then
/// keep the own branch subtrees, add remote branch nodes as unopened cells and
/// fill every common ancestor. Ancestors get moments combined from their
/// children, which always are ancestors or branch nodes themselves.
DistributeStats distribute_branch_nodes(Comm& comm, std::span<const Body> local, HashedTree& tree,
                                        Tag neighbour_tag, Tag branch_tag);

/// Child batch: parent key, child mask, then one record per present child.
Bytes encode_child_batch(const HashedTree& tree, HKey parent);
/// Inserts the children of a remote cell; they inherit the owner `owner`.
/// Returns the parent key. Throws DecodeError on malformed input.
HKey install_child_batch(HashedTree& tree, std::span<const std::uint8_t> batch, int owner);

}  // namespace nbody
