#include <algorithm>
#include <map>
#include <mutex>
#include <set>

#include "doctest.h"
#include "figures.hpp"
#include "nbody/error.hpp"
#include "nbody/hashed_octree.hpp"
#include "support.hpp"

using namespace nbody;

namespace {

constexpr Tag kNeighbourTag = 11;
constexpr Tag kBranchTag = 12;

std::vector<Body> fig_sorted() {
  auto pts = figures::fig2a_points();
  std::sort(pts.begin(), pts.end(), [](const Body& a, const Body& b) {
    const auto ka = interleave(quantize_in_cube(a.position, figures::kCentre, figures::kSide));
    const auto kb = interleave(quantize_in_cube(b.position, figures::kCentre, figures::kSide));
    return ka < kb;
  });
  return pts;
}

HashedTree build_hashed(std::span<const Body> bodies, const Vec3& centre, double side) {
  HashedTree t(centre, side);
  for (const auto& b : bodies) t.insert_body(b);
  t.compute_moments();
  return t;
}

std::vector<std::vector<Body>> split(const std::vector<Body>& bodies, int parts) {
  std::vector<std::vector<Body>> out(static_cast<std::size_t>(parts));
  const std::size_t n = bodies.size();
  for (int p = 0; p < parts; ++p) {
    const std::size_t lo = n * static_cast<std::size_t>(p) / static_cast<std::size_t>(parts);
    const std::size_t hi = n * static_cast<std::size_t>(p + 1) / static_cast<std::size_t>(parts);
    out[static_cast<std::size_t>(p)].assign(bodies.begin() + static_cast<long>(lo), bodies.begin() + static_cast<long>(hi));
  }
  return out;
}

struct RankView {
  std::unique_ptr<HashedTree> tree;
  DistributeStats stats;
};

std::vector<RankView> distribute(const std::vector<std::vector<Body>>& parts, const Vec3& centre, double side) {
  const int s = static_cast<int>(parts.size());
  std::vector<RankView> views(static_cast<std::size_t>(s));
  run_cluster(ClusterOptions{s}, [&](Comm& comm) {
    const auto& mine = parts[static_cast<std::size_t>(comm.rank())];
    auto tree = std::make_unique<HashedTree>(centre, side);
    for (const auto& b : mine) tree->insert_body(b);
    auto stats = distribute_branch_nodes(comm, mine, *tree, kNeighbourTag, kBranchTag);
    views[static_cast<std::size_t>(comm.rank())] = RankView{std::move(tree), std::move(stats)};
  });
  return views;
}

// Opens every remote cell of `view` by asking the owning rank's tree.
void expand(HashedTree& view, const std::vector<RankView>& owners, HKey k) {
  HashedCell* c = view.find(k);
  REQUIRE(c);
  if (c->is_leaf()) return;
  if (!c->children_local) {
    const int owner = c->owner;
    const Bytes batch = encode_child_batch(*owners[static_cast<std::size_t>(owner)].tree, k);
    CHECK(install_child_batch(view, batch, owner) == k);
    c = view.find(k);
  }
  const std::uint8_t mask = c->child_mask;
  for (int i = 0; i < 8; ++i)
    if ((mask >> i) & 1u) expand(view, owners, child_key(k, i));
}

}  // namespace

TEST_CASE("hierarchical keys") {
  CHECK(child_key(kRootKey, 0) == 8);
  CHECK(child_key(kRootKey, 7) == 15);
  CHECK(child_key(10, 2) == 82);
  CHECK(parent_key(82) == 10);
  CHECK(parent_key(15) == kRootKey);
  CHECK_THROWS_AS(parent_key(kRootKey), Error);
  CHECK(key_level(kRootKey) == 0);
  CHECK(key_level(12) == 1);
  CHECK(key_level(127) == 2);
  CHECK(key_octant(127) == 7);
  HKey deep = kRootKey;
  for (int l = 0; l < kMaxDepth; ++l) deep = child_key(deep, 5);
  CHECK(key_level(deep) == kMaxDepth);
  CHECK_THROWS_AS(child_key(deep, 0), Error);

  // Every child key lies in [8p, 8p + 7]: children of 12 are 96..103.
  for (int i = 0; i < 8; ++i) CHECK(child_key(12, i) == 96u + static_cast<unsigned>(i));

  const SpatialKey body{(5ull << 60) | (3ull << 57) | 12345};
  CHECK(body_key_to_cell_key(body, 0) == kRootKey);
  CHECK(body_key_to_cell_key(body, 1) == 8 + 5);
  CHECK(body_key_to_cell_key(body, 2) == ((8 + 5) << 3 | 3));
  CHECK(body_key_to_cell_key(body, kKeyBits) == ((1ull << 63) | body.bits));
}

TEST_CASE("cell geometry from keys") {
  auto [c, side] = cell_geometry(child_key(child_key(kRootKey, 4), 3), figures::kCentre, figures::kSide);
  CHECK(side == 2.0);
  CHECK(c == Vec3{5, 3, 3});
}

TEST_CASE("chained table: insert, find, collision, growth") {
  HashedTree t(Vec3{}, 2.0, 16);
  CHECK(t.bucket_count() == 16);
  HashedCell c;
  for (HKey k = 1; k <= 1000; ++k) {
    c.key = k * 7;
    t.insert(c);
  }
  CHECK(t.size() == 1000);
  CHECK(t.bucket_count() >= 1000);
  for (HKey k = 1; k <= 1000; ++k) REQUIRE(t.find(k * 7));
  CHECK_FALSE(t.contains(3));
  c.key = 700;
  CHECK_THROWS_WITH_AS(t.insert(c), doctest::Contains("key collision"), Error);
  CHECK(t.mean_probe_length() < 2.0);
}

TEST_CASE("leaf keys agree with body Morton keys") {
  const auto bodies = oracle::random_bodies(3000, 4, 1.0);
  const DomainBounds b = bounds_for(bodies);
  HashedTree t = build_hashed(bodies, Vec3{}, 2.0 * b.half_extent);
  std::map<std::uint64_t, HKey> leaf_of;
  t.for_each([&](const HashedCell& c) {
    if (c.is_leaf()) leaf_of[c.body.id] = c.key;
  });
  REQUIRE(leaf_of.size() == bodies.size());
  for (const auto& body : bodies) {
    const HKey leaf = leaf_of[body.id];
    const SpatialKey k = interleave(quantize(body.position, b));
    CHECK(body_key_to_cell_key(k, key_level(leaf)) == leaf);
  }
  // Sparse but fine enough that probes stay short.
  CHECK(t.mean_probe_length() < 2.0);
}

TEST_CASE("hashed build matches the linked octree") {
  const auto bodies = oracle::random_bodies(2000, 8, 1.0);
  const DomainBounds b = bounds_for(bodies);
  Octree serial = Octree::build(bodies, Vec3{}, 2.0 * b.half_extent);
  serial.compute_moments();
  HashedTree hashed = build_hashed(bodies, Vec3{}, 2.0 * b.half_extent);
  std::size_t seen = 0;
  serial.for_each_cell([&](std::uint64_t key, const OctCell& c) {
    const HashedCell* h = hashed.find(key);
    REQUIRE(h);
    CHECK(h->child_mask == c.child_mask);
    CHECK(h->count == c.count);
    CHECK(h->centre == c.centre);
    CHECK(h->side == c.side);
    CHECK(h->moments == c.moments);
    ++seen;
  });
  CHECK(seen == hashed.size());
}

TEST_CASE("neighbour bodies split cells but carry no mass") {
  HashedTree t(Vec3{}, 2.0);
  Body a{0, 1.0, {-0.5, -0.5, -0.5}, {}, {}, 0};
  Body n{1, 5.0, {-0.4, -0.4, -0.4}, {}, {}, 0};
  t.insert_body(a);
  t.insert_body(n, true);
  t.compute_moments();
  const HashedCell& root = *t.find(kRootKey);
  CHECK(root.neighbour_count == 1);
  CHECK(root.moments.total_mass == 1.0);
  CHECK(root.moments.com == a.position);
  const auto branches = branch_nodes(t);
  REQUIRE(branches.size() == 1);
  const HashedCell& bn = *t.find(branches[0]);
  CHECK(bn.is_leaf());
  CHECK(bn.body.id == 0);

  HashedTree alone(Vec3{}, 2.0);
  alone.insert_body(a);
  CHECK(branch_nodes(alone) == std::vector<HKey>{kRootKey});
}

TEST_CASE("branch nodes of the three-rank figure layout") {
  const auto pts = fig_sorted();
  const auto views = distribute(split(pts, 3), figures::kCentre, figures::kSide);
  const std::vector<std::set<figures::Square>> expected{
      {{0, 4, 0, 4}, {0, 2, 4, 6}, {0, 2, 6, 8}, {2, 3, 4, 5}},
      {{3, 4, 4, 5}, {3, 4, 5, 6}, {4, 5, 2, 3}, {4, 5, 3, 4}, {5, 6, 2, 3}},
      {{4, 8, 4, 8}, {6, 8, 0, 2}, {6, 8, 2, 4}, {5, 6, 3, 4}},
  };
  for (int r = 0; r < 3; ++r) {
    const auto& view = views[static_cast<std::size_t>(r)];
    std::set<figures::Square> got;
    for (HKey k : view.stats.own_branches) {
      const HashedCell& c = *view.tree->find(k);
      got.insert(figures::square_of(c.centre, c.side));
    }
    CHECK(got == expected[static_cast<std::size_t>(r)]);
    CHECK(view.stats.remote_branches == 13 - expected[static_cast<std::size_t>(r)].size());
  }
}

TEST_CASE("distributed views reproduce the serial tree") {
  for (int s : {1, 2, 5}) {
    CAPTURE(s);
    const auto bodies = oracle::morton_sorted(oracle::random_bodies(1500, 17 + static_cast<unsigned>(s), 1.0));
    const DomainBounds b = bounds_for(bodies);
    const double side = 2.0 * b.half_extent;
    Octree serial = Octree::build(bodies, Vec3{}, side);
    serial.compute_moments();
    std::map<HKey, const OctCell*> serial_cells;
    serial.for_each_cell([&](std::uint64_t key, const OctCell& c) { serial_cells[key] = &c; });

    const auto parts = split(bodies, s);
    auto views = distribute(parts, Vec3{}, side);

    std::size_t branch_total = 0;
    for (const auto& v : views) branch_total += v.stats.own_branches.size();

    for (int r = 0; r < s; ++r) {
      CAPTURE(r);
      const auto& view = *views[static_cast<std::size_t>(r)].tree;
      CHECK(views[static_cast<std::size_t>(r)].stats.remote_branches + views[static_cast<std::size_t>(r)].stats.own_branches.size() == branch_total);
      if (s == 1) CHECK(views[0].stats.own_branches == std::vector<HKey>{kRootKey});

      // Every stored cell, including filled ancestors, equals its serial twin.
      std::set<std::uint64_t> local_ids;
      view.for_each([&](const HashedCell& c) {
        const auto it = serial_cells.find(c.key);
        REQUIRE(it != serial_cells.end());
        CHECK(c.moments == it->second->moments);
        CHECK(c.count == it->second->count);
        CHECK(c.child_mask == it->second->child_mask);
        CHECK(c.centre == it->second->centre);
        if (c.key != kRootKey) CHECK(view.contains(parent_key(c.key)));
        if (c.is_leaf() && c.owner == kLocal) local_ids.insert(c.body.id);
      });
      std::set<std::uint64_t> want;
      for (const auto& body : parts[static_cast<std::size_t>(r)]) want.insert(body.id);
      CHECK(local_ids == want);
    }

    // Opening every remote cell on rank 0 recovers the whole tree.
    HashedTree& v0 = *views[0].tree;
    expand(v0, views, kRootKey);
    CHECK(v0.size() == serial_cells.size());
  }
}

TEST_CASE("child batches") {
  const auto bodies = oracle::random_bodies(200, 5, 1.0);
  HashedTree t = build_hashed(bodies, Vec3{}, 2.0 * bounds_for(bodies).half_extent);
  const Bytes batch = encode_child_batch(t, kRootKey);
  const HashedCell& root = *t.find(kRootKey);
  CHECK(batch.size() == 9 + static_cast<std::size_t>(std::popcount(root.child_mask)) * (8 + 121));

  HashedTree remote(t.root_centre(), t.root_side());
  HashedCell stub = root;
  stub.owner = 3;
  stub.children_local = false;
  remote.insert(stub);
  CHECK(install_child_batch(remote, batch, 3) == kRootKey);
  CHECK(remote.find(kRootKey)->children_local);
  for (int i = 0; i < 8; ++i) {
    if (!root.has_child(i)) continue;
    const HashedCell* c = remote.find(child_key(kRootKey, i));
    REQUIRE(c);
    CHECK(c->owner == 3);
    CHECK(c->moments == t.find(child_key(kRootKey, i))->moments);
    CHECK(c->children_local == c->is_leaf());
  }

  CHECK_THROWS_AS(encode_child_batch(t, 999999), Error);
  HashedTree fresh(t.root_centre(), t.root_side());
  fresh.insert(stub);
  Bytes truncated(batch.begin(), batch.end() - 5);
  CHECK_THROWS_AS(install_child_batch(fresh, truncated, 3), DecodeError);
  Bytes bad_mask = batch;
  bad_mask[8] ^= 0xFF;
  CHECK_THROWS_AS(install_child_batch(fresh, bad_mask, 3), DecodeError);
  Bytes trailing = batch;
  trailing.push_back(0);
  CHECK_THROWS_AS(install_child_batch(fresh, trailing, 3), DecodeError);
}
