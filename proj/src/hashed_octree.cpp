#include "nbody/hashed_octree.hpp"

#include <algorithm>
#include <bit>

#include "nbody/collectives.hpp"
#include "nbody/error.hpp"

namespace nbody {

HKey child_key(HKey k, int i) {
  if (key_level(k) >= kMaxDepth) throw Error("hashed octree: child key exceeds depth " + std::to_string(kMaxDepth));
  return (k << 3) | static_cast<HKey>(i & 7);
}

HKey parent_key(HKey k) {
  if (k <= kRootKey) throw Error("hashed octree: the root has no parent");
  return k >> 3;
}

int key_level(HKey k) { return (std::bit_width(k) - 1) / 3; }

HKey body_key_to_cell_key(SpatialKey k, int level) {
  if (level < 0 || level > kKeyBits) throw Error("hashed octree: level out of range");
  if (level == 0) return kRootKey;
  return (HKey{1} << (3 * level)) | (k.bits >> (3 * (kKeyBits - level)));
}

std::pair<Vec3, double> cell_geometry(HKey k, const Vec3& root_centre, double root_side) {
  const int level = key_level(k);
  Vec3 c = root_centre;
  double side = root_side;
  for (int l = level - 1; l >= 0; --l) {
    const int octant = static_cast<int>((k >> (3 * l)) & 7u);
    c = child_centre(c, side, octant);
    side /= 2;
  }
  return {c, side};
}

HashedTree::HashedTree(const Vec3& root_centre, double root_side, std::size_t initial_buckets)
    : centre_(root_centre), side_(root_side), heads_(std::bit_ceil(std::max<std::size_t>(initial_buckets, 1)), -1) {
  if (!(root_side > 0.0)) throw Error("hashed octree: root side must be positive");
}

HashedCell& HashedTree::insert(const HashedCell& cell) {
  if (find(cell.key)) throw Error("hashed octree: key collision on " + std::to_string(cell.key));
  if (count_ + 1 > heads_.size()) grow();
  const std::size_t b = bucket(cell.key);
  nodes_.push_back(Node{cell, heads_[b]});
  heads_[b] = static_cast<std::int64_t>(nodes_.size() - 1);
  ++count_;
  return nodes_.back().cell;
}

void HashedTree::grow() {
  heads_.assign(heads_.size() * 2, -1);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const std::size_t b = bucket(nodes_[i].cell.key);
    nodes_[i].next = heads_[b];
    heads_[b] = static_cast<std::int64_t>(i);
  }
}

HashedCell* HashedTree::find(HKey key) {
  for (std::int64_t i = heads_[bucket(key)]; i >= 0; i = nodes_[static_cast<std::size_t>(i)].next)
    if (nodes_[static_cast<std::size_t>(i)].cell.key == key) return &nodes_[static_cast<std::size_t>(i)].cell;
  return nullptr;
}

const HashedCell* HashedTree::find(HKey key) const { return const_cast<HashedTree*>(this)->find(key); }

double HashedTree::mean_probe_length() const {
  if (count_ == 0) return 0.0;
  std::size_t probes = 0;
  for (auto head : heads_) {
    std::size_t depth = 0;
    for (std::int64_t i = head; i >= 0; i = nodes_[static_cast<std::size_t>(i)].next) probes += ++depth;
  }
  return static_cast<double>(probes) / static_cast<double>(count_);
}

LeafBody HashedTree::make_leaf_body(const Body& body) const {
  return LeafBody{body.id, body.mass, body.position, quantize_in_cube(body.position, centre_, side_)};
}

HashedCell HashedTree::make_leaf(HKey key, const Vec3& centre, double side, const LeafBody& body,
                                 bool neighbour) const {
  HashedCell c;
  c.key = key;
  c.centre = centre;
  c.side = side;
  c.body = body;
  c.count = 1;
  c.neighbour_count = neighbour ? 1 : 0;
  c.moments = MassMoments{body.mass, body.position, {}};
  return c;
}

void HashedTree::insert_body(const Body& body, bool neighbour) {
  const LeafBody lb = make_leaf_body(body);
  if (!find(kRootKey)) {
    insert(make_leaf(kRootKey, centre_, side_, lb, neighbour));
    return;
  }
  HKey k = kRootKey;
  while (true) {
    HashedCell* cell = find(k);
    const int level = key_level(k);
    if (cell->is_leaf()) {
      if (cell->body.q == lb.q)
        throw Error("hashed octree: depth cap exceeded (bodies " + std::to_string(cell->body.id) + " and " +
                    std::to_string(lb.id) + " share a quantized cell)");
      const LeafBody old = cell->body;
      const bool old_neighbour = cell->neighbour_count > 0;
      const int o = child_octant(old.q, level);
      cell->child_mask = static_cast<std::uint8_t>(1u << o);
      const HashedCell moved =
          make_leaf(child_key(k, o), child_centre(cell->centre, cell->side, o), cell->side / 2, old, old_neighbour);
      insert(moved);
      cell = find(k);
    }
    cell->count += 1;
    if (neighbour) cell->neighbour_count += 1;
    const int o = child_octant(lb.q, level);
    const HKey ck = child_key(k, o);
    if (!cell->has_child(o)) {
      cell->child_mask = static_cast<std::uint8_t>(cell->child_mask | (1u << o));
      const HashedCell leaf = make_leaf(ck, child_centre(cell->centre, cell->side, o), cell->side / 2, lb, neighbour);
      insert(leaf);
      return;
    }
    k = ck;
  }
}

std::vector<HKey> HashedTree::keys() const {
  std::vector<HKey> out;
  out.reserve(count_);
  for (const auto& n : nodes_) out.push_back(n.cell.key);
  return out;
}

void HashedTree::for_each(const std::function<void(const HashedCell&)>& fn) const {
  for (const auto& n : nodes_) fn(n.cell);
}

void HashedTree::compute_moments() {
  std::vector<HKey> order = keys();
  std::sort(order.begin(), order.end(), [](HKey a, HKey b) {
    const int la = key_level(a), lb = key_level(b);
    return la != lb ? la > lb : a < b;
  });
  for (HKey k : order) {
    HashedCell& c = *find(k);
    if (c.is_leaf()) {
      c.moments = c.neighbour_count ? MassMoments{} : MassMoments{c.body.mass, c.body.position, {}};
      continue;
    }
    if (!c.children_local) continue;
    std::array<MassMoments, 8> kids;
    std::size_t n = 0;
    for (int i = 0; i < 8; ++i) {
      if (!c.has_child(i)) continue;
      const HashedCell* child = find(child_key(k, i));
      if (!child) throw Error("hashed octree: missing child of a local cell");
      if (child->count == child->neighbour_count) continue;
      kids[n++] = child->moments;
    }
    c.moments = n ? combine_moments(std::span<const MassMoments>(kids.data(), n)) : MassMoments{};
  }
}

std::vector<HKey> branch_nodes(const HashedTree& tree) {
  std::vector<HKey> out;
  if (!tree.find(kRootKey)) return out;
  const std::function<void(HKey)> visit = [&](HKey k) {
    const HashedCell& c = *tree.find(k);
    if (c.neighbour_count == 0) {
      out.push_back(k);
      return;
    }
    if (c.is_leaf()) return;  // the neighbour body itself
    for (int i = 0; i < 8; ++i)
      if (c.has_child(i)) visit(child_key(k, i));
  };
  visit(kRootKey);
  return out;
}

void write_hashed_cell(ByteWriter& w, const HashedCell& c) {
  w.u64(c.key);
  write_cell_record(w, c.centre, c.side, c.moments, c.count, c.child_mask, c.body.id);
}

HashedCell read_hashed_cell(ByteReader& r) {
  HashedCell c;
  const std::size_t at = r.offset();
  c.key = r.u64();
  if (c.key < kRootKey || key_level(c.key) > kMaxDepth) throw DecodeError("hashed cell: invalid key", at);
  const CellRecord rec = read_cell_record(r);
  c.centre = rec.centre;
  c.side = rec.side;
  c.moments = rec.moments;
  c.count = rec.count;
  c.child_mask = rec.mask;
  if (rec.mask == 0) {
    if (rec.count != 1) throw DecodeError("hashed cell: leaf with count != 1", at);
    c.body.id = rec.body_id;
    c.body.mass = rec.moments.total_mass;
    c.body.position = rec.moments.com;
  }
  return c;
}

namespace {

Bytes encode_body(const Body& b) {
  ByteWriter w;
  w.u64(b.id);
  w.f64(b.mass);
  w.vec3(b.position);
  return std::move(w).take();
}

Body decode_body(const Bytes& bytes) {
  ByteReader r(bytes);
  Body b;
  b.id = r.u64();
  b.mass = r.f64();
  b.position = r.vec3();
  r.expect_done("neighbour body");
  return b;
}

void copy_subtree(const HashedTree& from, HKey k, HashedTree& to) {
  const HashedCell& c = *from.find(k);
  to.insert(c);
  for (int i = 0; i < 8; ++i)
    if (c.has_child(i)) copy_subtree(from, child_key(k, i), to);
}

}  // namespace

DistributeStats distribute_branch_nodes(Comm& comm, std::span<const Body> local, HashedTree& tree,
                                        Tag neighbour_tag, Tag branch_tag) {
  const int id = comm.rank();
  const int s = comm.size();
  if (local.empty()) throw Error("distribute_branch_nodes: empty partition on rank " + std::to_string(id));

  if (id > 0) comm.send(id - 1, neighbour_tag, encode_body(local.front()));
  if (id + 1 < s) comm.send(id + 1, neighbour_tag, encode_body(local.back()));
  if (id > 0) tree.insert_body(decode_body(comm.recv(id - 1, neighbour_tag)), true);
  if (id + 1 < s) tree.insert_body(decode_body(comm.recv(id + 1, neighbour_tag)), true);

  DistributeStats stats;
  stats.own_branches = branch_nodes(tree);
  tree.compute_moments();

  HashedTree view(tree.root_centre(), tree.root_side(), std::max(tree.bucket_count(), HashedTree::kInitialBuckets));
  for (HKey b : stats.own_branches) copy_subtree(tree, b, view);

  ByteWriter mine;
  mine.u64(stats.own_branches.size());
  for (HKey b : stats.own_branches) write_hashed_cell(mine, *tree.find(b));
  Bytes own_bytes = std::move(mine).take();

  std::vector<HKey> all_branches;
  std::vector<int> branch_owner;
  for (int i = 0; i < s; ++i) {
    const Bytes got = broadcast(comm, i, i == id ? own_bytes : Bytes{}, branch_tag);
    ByteReader r(got);
    const std::uint64_t n = r.u64();
    for (std::uint64_t j = 0; j < n; ++j) {
      HashedCell c = read_hashed_cell(r);
      all_branches.push_back(c.key);
      branch_owner.push_back(i);
      if (i == id) continue;
      c.owner = i;
      c.children_local = c.is_leaf();
      if (c.is_leaf()) c.body = view.make_leaf_body(Body{c.body.id, c.body.mass, c.body.position, {}, {}, 0});
      view.insert(c);
      ++stats.remote_branches;
    }
    r.expect_done("branch node list");
  }

  for (std::size_t j = 0; j < all_branches.size(); ++j) {
    HKey k = all_branches[j];
    while (k != kRootKey) {
      const HKey p = parent_key(k);
      HashedCell* parent = view.find(p);
      if (!parent) {
        HashedCell top;
        top.key = p;
        std::tie(top.centre, top.side) = cell_geometry(p, view.root_centre(), view.root_side());
        top.owner = branch_owner[j];
        top.children_local = true;
        parent = &view.insert(top);
        ++stats.top_cells;
      }
      const bool seen = parent->has_child(key_octant(k));
      parent->child_mask = static_cast<std::uint8_t>(parent->child_mask | (1u << key_octant(k)));
      if (seen) break;
      k = p;
    }
  }

  // Counts and moments of the filled ancestors, deepest first.
  std::vector<HKey> tops;
  view.for_each([&](const HashedCell& c) {
    if (c.owner != kLocal && c.children_local && !c.is_leaf() && c.count == 0) tops.push_back(c.key);
  });
  std::sort(tops.begin(), tops.end(), [](HKey a, HKey b) {
    const int la = key_level(a), lb = key_level(b);
    return la != lb ? la > lb : a < b;
  });
  for (HKey k : tops) {
    HashedCell& c = *view.find(k);
    std::array<MassMoments, 8> kids;
    std::size_t n = 0;
    for (int i = 0; i < 8; ++i) {
      if (!c.has_child(i)) continue;
      const HashedCell& child = *view.find(child_key(k, i));
      c.count += child.count;
      kids[n++] = child.moments;
    }
    c.moments = combine_moments(std::span<const MassMoments>(kids.data(), n));
  }

  tree = std::move(view);
  return stats;
}

Bytes encode_child_batch(const HashedTree& tree, HKey parent) {
  const HashedCell* c = tree.find(parent);
  if (!c) throw Error("child request for unknown cell " + std::to_string(parent));
  if (!c->children_local || c->is_leaf()) throw Error("child request for a cell without local children");
  ByteWriter w;
  w.u64(parent);
  w.u8(c->child_mask);
  for (int i = 0; i < 8; ++i) {
    if (!c->has_child(i)) continue;
    const HashedCell* child = tree.find(child_key(parent, i));
    if (!child) throw Error("hashed octree: missing child of a local cell");
    write_hashed_cell(w, *child);
  }
  return std::move(w).take();
}

HKey install_child_batch(HashedTree& tree, std::span<const std::uint8_t> batch, int owner) {
  ByteReader r(batch);
  const HKey parent = r.u64();
  const std::uint8_t mask = r.u8();
  HashedCell* p = tree.find(parent);
  if (!p) throw DecodeError("child batch for unknown cell", 0);
  if (mask != p->child_mask) throw DecodeError("child batch mask does not match the parent", 8);
  for (int i = 0; i < 8; ++i) {
    if (!((mask >> i) & 1u)) continue;
    const std::size_t at = r.offset();
    HashedCell c = read_hashed_cell(r);
    if (c.key != child_key(parent, i)) throw DecodeError("child batch key out of order", at);
    c.owner = owner;
    c.children_local = c.is_leaf();
    if (c.is_leaf()) c.body = tree.make_leaf_body(Body{c.body.id, c.body.mass, c.body.position, {}, {}, 0});
    if (!tree.contains(c.key)) tree.insert(c);
  }
  r.expect_done("child batch");
  p = tree.find(parent);
  p->children_local = true;
  p->requested = false;
  return parent;
}

}  // namespace nbody
