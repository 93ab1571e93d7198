#include "nbody/octree.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nbody/error.hpp"

namespace nbody {

namespace {

constexpr std::uint32_t kTreeMagic = 0x544F424E;  // "NBOT"

std::unique_ptr<OctCell> make_leaf(const Vec3& centre, double side, int level, const LeafBody& b) {
  auto c = std::make_unique<OctCell>();
  c->centre = centre;
  c->side = side;
  c->level = level;
  c->count = 1;
  c->body = b;
  c->moments = MassMoments{b.mass, b.position, {}};
  return c;
}

void attach(OctCell& parent, int octant, std::unique_ptr<OctCell> child) {
  parent.children[static_cast<std::size_t>(octant)] = std::move(child);
  parent.child_mask = static_cast<std::uint8_t>(parent.child_mask | (1u << octant));
}

// Inserts below an existing cell, splitting leaves on the way down.
void insert_into(OctCell& start, const LeafBody& body, MergeStats* stats) {
  OctCell* cell = &start;
  while (true) {
    if (stats) ++stats->visited;
    if (cell->is_leaf()) {
      if (cell->body.q == body.q)
        throw Error("octree: depth cap exceeded (bodies " + std::to_string(cell->body.id) + " and " +
                    std::to_string(body.id) + " share a quantized cell)");
      if (cell->level >= kMaxDepth) throw Error("octree: depth cap exceeded");
      const LeafBody old = cell->body;
      const int o = child_octant(old.q, cell->level);
      attach(*cell, o, make_leaf(child_centre(cell->centre, cell->side, o), cell->side / 2, cell->level + 1, old));
    }
    cell->count += 1;
    const int o = child_octant(body.q, cell->level);
    auto& slot = cell->children[static_cast<std::size_t>(o)];
    if (!slot) {
      attach(*cell, o, make_leaf(child_centre(cell->centre, cell->side, o), cell->side / 2, cell->level + 1, body));
      return;
    }
    cell = slot.get();
  }
}

void moments_of(OctCell& cell) {
  if (cell.is_leaf()) {
    cell.moments = MassMoments{cell.body.mass, cell.body.position, {}};
    return;
  }
  std::array<MassMoments, 8> kids;
  std::size_t n = 0;
  for (auto& c : cell.children) {
    if (!c) continue;
    moments_of(*c);
    kids[n++] = c->moments;
  }
  cell.moments = combine_moments(std::span<const MassMoments>(kids.data(), n));
}

std::unique_ptr<OctCell> merge_cells(std::unique_ptr<OctCell> c1, std::unique_ptr<OctCell> c2,
                                     MergeStats* stats) {
  if (stats) ++stats->visited;
  if (c1->is_leaf()) {
    insert_into(*c2, c1->body, stats);
    return c2;
  }
  if (c2->is_leaf()) {
    insert_into(*c1, c2->body, stats);
    return c1;
  }
  for (int i = 0; i < 8; ++i) {
    auto& a = c1->children[static_cast<std::size_t>(i)];
    auto& b = c2->children[static_cast<std::size_t>(i)];
    if (a && b) {
      a = merge_cells(std::move(a), std::move(b), stats);
    } else if (b) {
      attach(*c1, i, std::move(b));
    }
  }
  c1->count = 0;
  for (auto& c : c1->children)
    if (c) c1->count += c->count;
  return c1;
}

void write_pre_order(ByteWriter& w, const OctCell& c) {
  write_cell_record(w, c.centre, c.side, c.moments, c.count, c.child_mask, c.body.id);
  for (const auto& k : c.children)
    if (k) write_pre_order(w, *k);
}

std::unique_ptr<OctCell> read_pre_order(ByteReader& r, int level, const Vec3& root_centre, double root_side,
                                        std::uint64_t& remaining) {
  if (remaining == 0) throw DecodeError("octree: more cells than announced", r.offset());
  --remaining;
  if (level > kMaxDepth) throw DecodeError("octree: depth exceeds cap", r.offset());
  const std::size_t at = r.offset();
  CellRecord rec = read_cell_record(r);
  auto c = std::make_unique<OctCell>();
  c->centre = rec.centre;
  c->side = rec.side;
  c->level = level;
  c->moments = rec.moments;
  c->count = rec.count;
  if (rec.mask == 0) {
    if (rec.count != 1) throw DecodeError("octree: leaf with count != 1", at);
    c->body.id = rec.body_id;
    c->body.mass = rec.moments.total_mass;
    c->body.position = rec.moments.com;
    try {
      c->body.q = quantize_in_cube(c->body.position, root_centre, root_side);
    } catch (const Error&) {
      throw DecodeError("octree: leaf body outside root cube", at);
    }
    return c;
  }
  std::uint64_t sum = 0;
  for (int i = 0; i < 8; ++i) {
    if (!(rec.mask & (1u << i))) continue;
    auto child = read_pre_order(r, level + 1, root_centre, root_side, remaining);
    sum += child->count;
    attach(*c, i, std::move(child));
  }
  if (sum != rec.count) throw DecodeError("octree: cell count does not match children", at);
  return c;
}

void walk(const OctCell& node, std::uint64_t key, const Body& body, double theta, Softening eps,
          TraversalResult& out, InteractionLog* log) {
  for (int i = 0; i < 8; ++i) {
    const OctCell* c = node.child(i);
    if (!c) continue;
    const std::uint64_t ck = (key << 3) | static_cast<std::uint64_t>(i);
    if (c->is_leaf()) {
      if (c->body.id == body.id) continue;
      out.accel += pairwise_accel(body.position, c->body.position, c->body.mass, eps);
      out.work += kParticleParticleWork;
      if (log) log->push_back({false, c->body.id});
      continue;
    }
    const double d = norm(body.position - c->moments.com);
    if (c->side < theta * d) {
      out.accel += cell_accel(body.position, c->moments);
      out.work += kParticleCellWork;
      if (log) log->push_back({true, ck});
    } else {
      walk(*c, ck, body, theta, eps, out, log);
    }
  }
}

bool same_cells(const OctCell& a, const OctCell& b) {
  if (a.child_mask != b.child_mask || a.count != b.count || a.level != b.level) return false;
  if (!(a.centre == b.centre) || a.side != b.side) return false;
  if (a.is_leaf()) {
    return a.body.id == b.body.id && a.body.mass == b.body.mass && a.body.position == b.body.position;
  }
  for (int i = 0; i < 8; ++i) {
    if (a.child(i) && !same_cells(*a.child(i), *b.child(i))) return false;
  }
  return true;
}

double rel(double a, double b, double scale) { return std::abs(a - b) / scale; }

double moment_difference(const OctCell& a, const OctCell& b) {
  const MassMoments& x = a.moments;
  const MassMoments& y = b.moments;
  const double mscale = std::max(std::abs(x.total_mass), 1e-300);
  const double lscale = std::max({norm(x.com), a.side, 1e-300});
  const double qscale = std::max(x.total_mass * a.side * a.side, 1e-300);
  double d = rel(x.total_mass, y.total_mass, mscale);
  for (int k = 0; k < 3; ++k) d = std::max(d, rel(x.com[k], y.com[k], lscale));
  for (int p = 0; p < 3; ++p)
    for (int q = p; q < 3; ++q) d = std::max(d, rel(x.quad(p, q), y.quad(p, q), qscale));
  for (int i = 0; i < 8; ++i)
    if (a.child(i) && b.child(i)) d = std::max(d, moment_difference(*a.child(i), *b.child(i)));
  return d;
}

}  // namespace

int child_octant(const Quantized& q, int parent_level) {
  const int bit = kKeyBits - 1 - parent_level;
  return static_cast<int>(((q[0] >> bit) & 1u) << 2 | ((q[1] >> bit) & 1u) << 1 | ((q[2] >> bit) & 1u));
}

Vec3 child_centre(const Vec3& centre, double side, int octant) {
  const double o = side / 4;
  return {centre.x + ((octant & 4) ? o : -o), centre.y + ((octant & 2) ? o : -o),
          centre.z + ((octant & 1) ? o : -o)};
}

Quantized quantize_in_cube(const Vec3& pos, const Vec3& centre, double side) {
  const double h = side / 2;
  return {quantize_in(pos.x, centre.x - h, side), quantize_in(pos.y, centre.y - h, side),
          quantize_in(pos.z, centre.z - h, side)};
}

Octree::Octree(const Vec3& root_centre, double root_side) : centre_(root_centre), side_(root_side) {
  if (!(root_side > 0.0)) throw Error("octree: root side must be positive");
}

Octree Octree::build(std::span<const Body> bodies, const Vec3& root_centre, double root_side) {
  Octree t(root_centre, root_side);
  for (const auto& b : bodies) t.insert(b);
  return t;
}

LeafBody Octree::make_leaf_body(const Body& body) const {
  return LeafBody{body.id, body.mass, body.position, quantize_in_cube(body.position, centre_, side_)};
}

void Octree::insert(const Body& body) { insert(make_leaf_body(body)); }

void Octree::insert(const LeafBody& body) {
  if (!root_) {
    root_ = make_leaf(centre_, side_, 0, body);
    return;
  }
  insert_into(*root_, body, nullptr);
}

void Octree::compute_moments() {
  if (root_) moments_of(*root_);
}

std::size_t Octree::cell_count() const {
  std::size_t n = 0;
  for_each_cell([&](std::uint64_t, const OctCell&) { ++n; });
  return n;
}

void Octree::for_each_cell(const std::function<void(std::uint64_t, const OctCell&)>& fn) const {
  if (!root_) return;
  const std::function<void(std::uint64_t, const OctCell&)> rec = [&](std::uint64_t key, const OctCell& c) {
    fn(key, c);
    for (int i = 0; i < 8; ++i)
      if (c.child(i)) rec((key << 3) | static_cast<std::uint64_t>(i), *c.child(i));
  };
  rec(1, *root_);
}

Octree merge(Octree t1, Octree t2, MergeStats* stats) {
  if (!(t1.centre_ == t2.centre_) || t1.side_ != t2.side_)
    throw Error("octree merge: root cells differ");
  if (!t2.root_) return t1;
  if (!t1.root_) return t2;
  t1.root_ = merge_cells(std::move(t1.root_), std::move(t2.root_), stats);
  return t1;
}

void write_cell_record(ByteWriter& w, const Vec3& centre, double side, const MassMoments& m,
                       std::uint64_t count, std::uint8_t mask, std::uint64_t body_id) {
  w.vec3(centre);
  w.f64(side);
  w.f64(m.total_mass);
  w.vec3(m.com);
  w.f64(m.quad.xx);
  w.f64(m.quad.xy);
  w.f64(m.quad.xz);
  w.f64(m.quad.yy);
  w.f64(m.quad.yz);
  w.f64(m.quad.zz);
  w.u64(count);
  w.u8(mask);
  if (mask == 0) w.u64(body_id);
}

CellRecord read_cell_record(ByteReader& r) {
  CellRecord c;
  c.centre = r.vec3();
  c.side = r.f64();
  c.moments.total_mass = r.f64();
  c.moments.com = r.vec3();
  c.moments.quad.xx = r.f64();
  c.moments.quad.xy = r.f64();
  c.moments.quad.xz = r.f64();
  c.moments.quad.yy = r.f64();
  c.moments.quad.yz = r.f64();
  c.moments.quad.zz = r.f64();
  c.count = r.u64();
  c.mask = r.u8();
  if (c.mask == 0) c.body_id = r.u64();
  return c;
}

Bytes serialize_octree(const Octree& tree) {
  const std::size_t cells = tree.cell_count();
  ByteWriter w(44 + cells * 129);
  w.u32(kTreeMagic);
  w.vec3(tree.root_centre());
  w.f64(tree.root_side());
  w.u64(cells);
  if (tree.root()) write_pre_order(w, *tree.root());
  return std::move(w).take();
}

Octree deserialize_octree(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.u32() != kTreeMagic) throw DecodeError("octree: bad magic", 0);
  const Vec3 centre = r.vec3();
  const double side = r.f64();
  if (!(side > 0.0)) throw DecodeError("octree: non-positive root side", r.offset());
  std::uint64_t cells = r.u64();
  Octree t(centre, side);
  if (cells > 0) t.root_ = read_pre_order(r, 0, centre, side, cells);
  if (cells != 0) throw DecodeError("octree: fewer cells than announced", r.offset());
  r.expect_done("octree");
  return t;
}

TraversalResult traverse_accel(const Body& body, const Octree& tree, double theta, Softening eps,
                               InteractionLog* log) {
  TraversalResult out;
  const OctCell* root = tree.root();
  if (!root) return out;
  if (root->is_leaf()) {
    if (root->body.id != body.id) {
      out.accel += pairwise_accel(body.position, root->body.position, root->body.mass, eps);
      out.work += kParticleParticleWork;
      if (log) log->push_back({false, root->body.id});
    }
    return out;
  }
  walk(*root, 1, body, theta, eps, out, log);
  return out;
}

bool same_structure(const Octree& a, const Octree& b) {
  if (!(a.root_centre() == b.root_centre()) || a.root_side() != b.root_side()) return false;
  if (!a.root() || !b.root()) return !a.root() && !b.root();
  return same_cells(*a.root(), *b.root());
}

double max_moment_difference(const Octree& a, const Octree& b) {
  if (!a.root() || !b.root()) return 0.0;
  return moment_difference(*a.root(), *b.root());
}

}  // namespace nbody
