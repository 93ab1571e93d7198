#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "nbody/morton.hpp"
#include "nbody/physics.hpp"
#include "nbody/wire.hpp"

namespace nbody {

/// Interaction weights shared by every traversal and by the work estimates.
inline constexpr std::uint64_t kParticleParticleWork = 1;
inline constexpr std::uint64_t kParticleCellWork = 2;

/// Deepest cell level; a level-21 cell spans one quantization step.
inline constexpr int kMaxDepth = kKeyBits;

/// The body held by a leaf. `q` are its 21-bit coordinates within the root cube
/// and decide every octant choice, so tree structure and Morton order agree.
struct LeafBody {
  std::uint64_t id = 0;
  double mass = 0.0;
  Vec3 position;
  Quantized q{};
};

/// Octant index of a body at a child of a cell on `parent_level`:
/// (x bit << 2) | (y bit << 1) | z bit.
int child_octant(const Quantized& q, int parent_level);

/// Geometry of child `octant` of a cell: centre offset by side/4 per axis.
Vec3 child_centre(const Vec3& centre, double side, int octant);

/// Quantizes a position inside the cube [centre - side/2, centre + side/2).
Quantized quantize_in_cube(const Vec3& pos, const Vec3& centre, double side);

struct OctCell {
  Vec3 centre;
  double side = 0.0;
  int level = 0;
  std::uint8_t child_mask = 0;
  std::uint64_t count = 0;
  MassMoments moments;  // leaf: the body's mass at its position
  LeafBody body;        // leaves only
  std::array<std::unique_ptr<OctCell>, 8> children;

  bool is_leaf() const { return child_mask == 0; }
  const OctCell* child(int i) const { return children[static_cast<std::size_t>(i)].get(); }
};

struct MergeStats {
  std::uint64_t visited = 0;  // cell pairs examined plus cells walked by re-insertion
};

struct Interaction {
  bool cell = false;       // particle-cell when true, particle-particle otherwise
  std::uint64_t ref = 0;   // cell key for particle-cell, body id for particle-particle

  friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

using InteractionLog = std::vector<Interaction>;

struct TraversalResult {
  Vec3 accel;
  std::uint64_t work = 0;
};

/// Explicit linked octree holding one body per leaf.
class Octree {
 public:
  Octree(const Vec3& root_centre, double root_side);

  static Octree build(std::span<const Body> bodies, const Vec3& root_centre, double root_side);

  /// Inserts a body, splitting leaves until it is alone. Throws when the body
  /// is outside the root cube or shares its quantized cell with another body.
  void insert(const Body& body);
  void insert(const LeafBody& body);

  /// Bottom-up moments; internal cells combine children in octant order.
  void compute_moments();

  const OctCell* root() const { return root_.get(); }
  bool empty() const { return root_ == nullptr; }
  std::uint64_t body_count() const { return root_ ? root_->count : 0; }
  std::size_t cell_count() const;
  const Vec3& root_centre() const { return centre_; }
  double root_side() const { return side_; }

  LeafBody make_leaf_body(const Body& body) const;

  /// Pre-order visit with hierarchical keys (root key 1, child = key << 3 | octant).
  void for_each_cell(const std::function<void(std::uint64_t key, const OctCell&)>& fn) const;

  friend Octree merge(Octree t1, Octree t2, MergeStats* stats);
  friend Octree deserialize_octree(std::span<const std::uint8_t> bytes);

 private:
  Vec3 centre_;
  double side_;
  std::unique_ptr<OctCell> root_;
};

/// Moves the contents of t2 into t1. Roots must coincide exactly.
Octree merge(Octree t1, Octree t2, MergeStats* stats = nullptr);

/// Pre-order wire form: header (magic, root centre, root side, cell count) then
/// one record per cell. See `write_cell_record`.
Bytes serialize_octree(const Octree& tree);
Octree deserialize_octree(std::span<const std::uint8_t> bytes);

/// Cell record: centre, side, mass, com, quad (xx xy xz yy yz zz), count, mask,
/// and for leaves the body id. Little-endian, 64-bit reals.
void write_cell_record(ByteWriter& w, const Vec3& centre, double side, const MassMoments& m,
                       std::uint64_t count, std::uint8_t mask, std::uint64_t body_id);

struct CellRecord {
  Vec3 centre;
  double side = 0.0;
  MassMoments moments;
  std::uint64_t count = 0;
  std::uint8_t mask = 0;
  std::uint64_t body_id = 0;
};

CellRecord read_cell_record(ByteReader& r);

/// Acceleration on `body` by recursive multipole-acceptance descent from the
/// root's children. A child is approximated when side < theta * d, d being the
/// distance to its centre of mass. The body's own leaf is skipped.
TraversalResult traverse_accel(const Body& body, const Octree& tree, double theta, Softening eps,
                               InteractionLog* log = nullptr);

/// Same structure and leaf bodies (bit-exact), ignoring moments.
bool same_structure(const Octree& a, const Octree& b);

/// Largest relative difference of moments over matching cells; structures must match.
double max_moment_difference(const Octree& a, const Octree& b);

}  // namespace nbody
