#include "nbody/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <deque>
#include <mutex>
#include <string>
#include <unordered_set>

#include "nbody/collectives.hpp"
#include "nbody/error.hpp"
#include "nbody/integrator.hpp"
#include "nbody/morton.hpp"

namespace nbody {

void SimConfig::validate() const {
  if (algorithm < 0 || algorithm >= kAlgorithmCount) throw Error("algorithm must be in 0..7");
  if (n < 2) throw Error("n must be at least 2");
  if (ranks < 1) throw Error("ranks must be at least 1");
  if (static_cast<std::size_t>(ranks) > n) throw Error("ranks must not exceed n");
  if (!(theta >= 0.0)) throw Error("theta must be non-negative");
  if (!(dt > 0.0)) throw Error("dt must be positive");
  if (!(eps.eps >= 0.0)) throw Error("eps must be non-negative");
  if (exchange_width < 1) throw Error("exchange width must be positive");
}

std::vector<Body> initial_bodies(const SimConfig& cfg) {
  ScenarioConfig sc;
  sc.n_total = cfg.n;
  sc.seed = cfg.seed;
  return two_clusters(sc);
}

// ---------------------------------------------------------------------------
// Remote cells and hashed traversals

RemoteCells::RemoteCells(Comm& comm, HashedTree& tree, Tag request_tag, Tag reply_tag)
    : comm_(comm), tree_(tree), request_tag_(request_tag), reply_tag_(reply_tag) {}

void RemoteCells::serve() {
  served_ += try_serve(comm_, request_tag_, reply_tag_, [&](int, const Bytes& req) {
    ByteReader r(req);
    const HKey key = r.u64();
    r.expect_done("child request");
    return encode_child_batch(tree_, key);
  });
}

void RemoteCells::request(HKey key) {
  HashedCell* c = tree_.find(key);
  if (!c) throw Error("request for a cell that is not in the tree");
  if (c->children_local || c->requested) return;
  if (std::find(asked_.begin(), asked_.end(), key) != asked_.end()) ++repeated_;
  asked_.push_back(key);
  c->requested = true;
  ByteWriter w;
  w.u64(key);
  comm_.send(c->owner, request_tag_, std::move(w).take());
  ++requests_;
}

void RemoteCells::drain_replies() {
  while (auto env = comm_.try_recv_any(reply_tag_)) install_child_batch(tree_, env->payload, env->source);
}

void RemoteCells::await(HKey key) {
  const std::array<Tag, 2> wake{request_tag_, reply_tag_};
  while (true) {
    serve();
    drain_replies();
    const HashedCell* c = tree_.find(key);
    if (c->children_local) return;
    if (!c->requested) throw Error("waiting for children that were never requested");
    comm_.wait_any(wake);
  }
}

namespace {

void descend(HKey key, const Body& body, HashedTree& tree, double theta, Softening eps, RemoteCells& remote,
             TraversalResult& out, InteractionLog* log) {
  if (!tree.find(key)->children_local) {
    remote.request(key);
    remote.await(key);
  }
  const std::uint8_t mask = tree.find(key)->child_mask;
  for (int i = 0; i < 8; ++i) {
    if (!((mask >> i) & 1u)) continue;
    const HKey ck = child_key(key, i);
    const HashedCell& c = *tree.find(ck);
    if (c.is_leaf()) {
      if (c.body.id == body.id) continue;
      out.accel += pairwise_accel(body.position, c.body.position, c.body.mass, eps);
      out.work += kParticleParticleWork;
      if (log) log->push_back({false, c.body.id});
      continue;
    }
    const double d = norm(body.position - c.moments.com);
    if (c.side < theta * d) {
      out.accel += cell_accel(body.position, c.moments);
      out.work += kParticleCellWork;
      if (log) log->push_back({true, ck});
    } else {
      descend(ck, body, tree, theta, eps, remote, out, log);
    }
  }
}

bool root_leaf_case(const Body& body, const HashedTree& tree, Softening eps, TraversalResult& out,
                    InteractionLog* log) {
  const HashedCell* root = tree.find(kRootKey);
  if (!root) return true;
  if (!root->is_leaf()) return false;
  if (root->body.id != body.id) {
    out.accel += pairwise_accel(body.position, root->body.position, root->body.mass, eps);
    out.work += kParticleParticleWork;
    if (log) log->push_back({false, root->body.id});
  }
  return true;
}

}  // namespace

TraversalResult hashed_traverse(const Body& body, HashedTree& tree, double theta, Softening eps,
                                RemoteCells& remote, InteractionLog* log) {
  TraversalResult out;
  if (root_leaf_case(body, tree, eps, out, log)) return out;
  descend(kRootKey, body, tree, theta, eps, remote, out, log);
  return out;
}

namespace {

// Key shifted so that its leading bit sits at bit 63; disjoint cells then
// compare in depth-first order.
std::uint64_t left_aligned(HKey k) { return k << (3 * (kMaxDepth - key_level(k))); }

struct Contribution {
  std::uint64_t order;
  Vec3 accel;
  Interaction what;
};

struct AsyncBuffers {
  std::vector<Contribution> found;
  std::vector<HKey> walk;
  std::deque<HKey> defer;
};

}  // namespace

TraversalResult async_traverse(const Body& body, HashedTree& tree, double theta, Softening eps,
                               RemoteCells& remote, InteractionLog* log, AsyncStats* stats) {
  TraversalResult out;
  if (root_leaf_case(body, tree, eps, out, log)) return out;

  thread_local AsyncBuffers buf;
  auto& found = buf.found;
  auto& walk = buf.walk;
  auto& defer = buf.defer;
  found.clear();
  walk.assign(1, kRootKey);
  defer.clear();
  std::size_t head = 0;

  while (true) {
    HKey node;
    if (head < walk.size()) {
      node = walk[head++];
    } else if (!defer.empty()) {
      node = defer.front();
      defer.pop_front();
      remote.await(node);
    } else {
      break;
    }
    const HashedCell* n = tree.find(node);
    if (!n->children_local) {
      remote.serve();
      remote.request(node);
      defer.push_back(node);
      if (stats) ++stats->defers;
      continue;
    }
    const std::uint8_t mask = n->child_mask;
    for (int i = 0; i < 8; ++i) {
      if (!((mask >> i) & 1u)) continue;
      const HKey ck = child_key(node, i);
      const HashedCell& c = *tree.find(ck);
      if (c.is_leaf()) {
        if (c.body.id == body.id) continue;
        found.push_back({left_aligned(ck), pairwise_accel(body.position, c.body.position, c.body.mass, eps),
                         {false, c.body.id}});
        out.work += kParticleParticleWork;
        continue;
      }
      const double d = norm(body.position - c.moments.com);
      if (c.side < theta * d) {
        found.push_back({left_aligned(ck), cell_accel(body.position, c.moments), {true, ck}});
        out.work += kParticleCellWork;
      } else {
        walk.push_back(ck);
      }
    }
  }

  std::sort(found.begin(), found.end(), [](const Contribution& x, const Contribution& y) { return x.order < y.order; });
  for (const auto& f : found) {
    out.accel += f.accel;
    if (log) log->push_back(f.what);
  }
  return out;
}

bool depth_first_before(HKey a, HKey b) {
  const std::uint64_t x = left_aligned(a), y = left_aligned(b);
  return x != y ? x < y : key_level(a) < key_level(b);
}

// ---------------------------------------------------------------------------
// Drivers

namespace {

using Clock = std::chrono::steady_clock;

class PhaseScope {
 public:
  PhaseScope(Comm& comm, RankReport& report, Phase p) : report_(report), phase_(p), start_(Clock::now()) {
    comm.set_phase(p);
  }
  ~PhaseScope() {
    report_.seconds[static_cast<std::size_t>(phase_)] +=
        std::chrono::duration<double>(Clock::now() - start_).count();
  }

 private:
  RankReport& report_;
  Phase phase_;
  Clock::time_point start_;
};

std::vector<Bytes> even_parts(std::span<const Body> all, int s) {
  std::vector<Bytes> parts;
  const std::size_t n = all.size();
  const std::size_t base = n / static_cast<std::size_t>(s);
  const std::size_t extra = n % static_cast<std::size_t>(s);
  std::size_t at = 0;
  for (int r = 0; r < s; ++r) {
    const std::size_t len = base + (static_cast<std::size_t>(r) < extra ? 1 : 0);
    parts.push_back(encode_bodies(all.subspan(at, len)));
    at += len;
  }
  return parts;
}

std::vector<Body> concat_decoded(const std::vector<Bytes>& parts) {
  std::vector<Body> all;
  for (const auto& p : parts) {
    auto some = decode_bodies(p);
    all.insert(all.end(), some.begin(), some.end());
  }
  return all;
}

DomainBounds global_bounds(Comm& comm, std::span<const Body> local) {
  double m = 0.0;
  for (const auto& b : local) m = std::max({m, std::abs(b.position.x), std::abs(b.position.y), std::abs(b.position.z)});
  m = allreduce_max(comm, m, tags::bounds);
  return DomainBounds{m > 0.0 ? m * 1.001 : 1.0};
}

Bytes merge_bytes(Bytes lower, Bytes higher, std::uint64_t& visited) {
  MergeStats ms;
  Octree merged = merge(deserialize_octree(lower), deserialize_octree(higher), &ms);
  visited += ms.visited;
  return serialize_octree(merged);
}

class RankDriver {
 public:
  RankDriver(const SimConfig& cfg, Comm& comm, RankReport& report) : cfg_(cfg), comm_(comm), report_(report) {}

  void run(const std::vector<Body>& initial, const Observer& observer, std::size_t every, SimResult& result) {
    {
      PhaseScope ps(comm_, report_, Phase::setup);
      std::vector<Bytes> parts;
      if (comm_.rank() == 0) parts = even_parts(initial, comm_.size());
      p_ = decode_bodies(scatterv(comm_, 0, std::move(parts), tags::scatter));
      const auto n = static_cast<std::uint64_t>(cfg_.n);
      for (auto& b : p_) b.work = n;
    }
    const double half = 0.5 * cfg_.dt;
    force_phase(0);
    if (observer) observe(0, 0.0, observer);
    for (std::size_t step = 1; step <= cfg_.steps; ++step) {
      {
        PhaseScope ps(comm_, report_, Phase::integrate);
        kick(p_, half);
        drift(p_, cfg_.dt);
      }
      force_phase(step);
      {
        PhaseScope ps(comm_, report_, Phase::integrate);
        kick(p_, half);
      }
      if (observer && every > 0 && step % every == 0)
        observe(step, static_cast<double>(step) * cfg_.dt, observer);
    }
    PhaseScope ps(comm_, report_, Phase::observe);
    auto gathered = gatherv(comm_, 0, encode_bodies(p_), tags::gather);
    if (comm_.rank() == 0) {
      result.bodies = concat_decoded(gathered);
      std::sort(result.bodies.begin(), result.bodies.end(), [](const Body& a, const Body& b) { return a.id < b.id; });
    }
  }

 private:
  void observe(std::size_t step, double t, const Observer& observer) {
    PhaseScope ps(comm_, report_, Phase::observe);
    auto gathered = gatherv(comm_, 0, encode_bodies(p_), tags::observe);
    if (comm_.rank() != 0) return;
    auto all = concat_decoded(gathered);
    std::sort(all.begin(), all.end(), [](const Body& a, const Body& b) { return a.id < b.id; });
    observer(step, t, all);
  }

  void force_phase(std::size_t step) {
    switch (cfg_.algorithm) {
      case 0:
        ring_forces();
        break;
      case 1:
        gathered_tree_forces();
        break;
      case 2:
        merged_tree_forces();
        break;
      case 3:
      case 4:
        central_decompose(cfg_.algorithm == 4);
        merged_tree_forces();
        break;
      case 5:
        parallel_decompose();
        merged_tree_forces();
        break;
      default:
        parallel_decompose();
        hashed_forces(step, cfg_.algorithm == 7);
        break;
    }
    report_.max_local_bodies = std::max(report_.max_local_bodies, p_.size());
  }

  void ring_forces() {
    PhaseScope ps(comm_, report_, Phase::force);
    const int s = comm_.size();
    const int right = (comm_.rank() + 1) % s;
    const int left = (comm_.rank() + s - 1) % s;
    for (auto& b : p_) {
      b.acceleration = {};
      b.work = 0;
    }
    for (std::size_t i = 0; i < p_.size(); ++i)
      for (std::size_t j = 0; j < p_.size(); ++j) {
        if (i == j) continue;
        p_[i].acceleration += pairwise_accel(p_[i].position, p_[j].position, p_[j].mass, cfg_.eps);
        p_[i].work += kParticleParticleWork;
      }
    std::vector<PointMass> visiting;
    for (const auto& b : p_) visiting.push_back({b.mass, b.position});
    for (int round = 1; round < s; ++round) {
      ByteWriter w(8 + visiting.size() * 32);
      w.u64(visiting.size());
      for (const auto& pm : visiting) {
        w.f64(pm.mass);
        w.vec3(pm.position);
      }
      comm_.send(right, tags::ring, std::move(w).take());
      const Bytes got = comm_.recv(left, tags::ring);
      ByteReader r(got);
      visiting.assign(r.u64(), {});
      for (auto& pm : visiting) {
        pm.mass = r.f64();
        pm.position = r.vec3();
      }
      r.expect_done("ring block");
      for (auto& b : p_)
        for (const auto& pm : visiting) {
          b.acceleration += pairwise_accel(b.position, pm.position, pm.mass, cfg_.eps);
          b.work += kParticleParticleWork;
        }
    }
    for (const auto& b : p_) report_.work += b.work;
  }

  void traverse_local(const Octree& tree) {
    PhaseScope ps(comm_, report_, Phase::force);
    for (auto& b : p_) {
      const TraversalResult r = traverse_accel(b, tree, cfg_.theta, cfg_.eps);
      b.acceleration = r.accel;
      b.work = r.work;
      report_.work += r.work;
    }
  }

  // Rank 0 holds the finished tree; everyone else receives it.
  void share_and_traverse(std::optional<Octree> tree) {
    Bytes bytes;
    {
      PhaseScope ps(comm_, report_, Phase::share);
      if (comm_.rank() == 0) bytes = serialize_octree(*tree);
      bytes = broadcast(comm_, 0, std::move(bytes), tags::tree);
      if (comm_.rank() != 0) tree = deserialize_octree(bytes);
    }
    traverse_local(*tree);
  }

  void gathered_tree_forces() {
    std::vector<Bytes> gathered;
    {
      PhaseScope ps(comm_, report_, Phase::decompose);
      gathered = gatherv(comm_, 0, encode_bodies(p_), tags::gather);
    }
    std::optional<Octree> tree;
    {
      PhaseScope ps(comm_, report_, Phase::build);
      if (comm_.rank() == 0) {
        const auto all = concat_decoded(gathered);
        const DomainBounds b = bounds_for(all);
        tree = Octree::build(all, Vec3{}, 2.0 * b.half_extent);
        tree->compute_moments();
      }
    }
    share_and_traverse(std::move(tree));
  }

  void merged_tree_forces() {
    std::optional<Octree> tree;
    {
      PhaseScope ps(comm_, report_, Phase::build);
      const DomainBounds b = global_bounds(comm_, p_);
      const Octree local = Octree::build(p_, Vec3{}, 2.0 * b.half_extent);
      std::uint64_t& visited = report_.merge_visited;
      Bytes merged = reduce(
          comm_, 0, serialize_octree(local),
          [&visited](Bytes lower, Bytes higher) { return merge_bytes(std::move(lower), std::move(higher), visited); },
          tags::merge);
      if (comm_.rank() == 0) {
        tree = deserialize_octree(merged);
        tree->compute_moments();
      }
    }
    share_and_traverse(std::move(tree));
  }

  void central_decompose(bool balance) {
    PhaseScope ps(comm_, report_, Phase::decompose);
    auto gathered = gatherv(comm_, 0, encode_bodies(p_), tags::gather);
    std::vector<Bytes> parts;
    if (comm_.rank() == 0) {
      const auto all = concat_decoded(gathered);
      const DomainBounds b = bounds_for(all);
      const auto keys = keys_for(all, b);
      std::vector<KeyedBody> keyed(all.size());
      for (std::size_t i = 0; i < all.size(); ++i) keyed[i] = {keys[i], all[i]};
      insertion_sort(keyed);
      std::vector<Body> sorted(keyed.size());
      for (std::size_t i = 0; i < keyed.size(); ++i) sorted[i] = keyed[i].body;
      if (balance) {
        std::vector<std::uint64_t> w(sorted.size());
        for (std::size_t i = 0; i < sorted.size(); ++i) w[i] = sorted[i].work;
        const Partition z = costzones(w, comm_.size());
        for (int r = 0; r < comm_.size(); ++r)
          parts.push_back(encode_bodies(std::span<const Body>(sorted).subspan(z.begin(r), z.size(r))));
      } else {
        parts = even_parts(sorted, comm_.size());
      }
    }
    p_ = decode_bodies(scatterv(comm_, 0, std::move(parts), tags::scatter));
  }

  void parallel_decompose() {
    PhaseScope ps(comm_, report_, Phase::decompose);
    const DomainBounds b = global_bounds(comm_, p_);
    std::vector<KeyedBody> keyed(p_.size());
    for (std::size_t i = 0; i < p_.size(); ++i) keyed[i] = {interleave(quantize(p_[i].position, b)), p_[i]};
    int k = cfg_.exchange_width;
    if (comm_.size() > 1) {
      const std::uint64_t smallest = allreduce_min(comm_, p_.size(), tags::width);
      k = static_cast<int>(std::min<std::uint64_t>(static_cast<std::uint64_t>(k), smallest / 2));
      if (k < 1) throw Error("parallel_sort: partition too small for exchange width");
    }
    report_.sort_rounds += parallel_sort(comm_, keyed, tags::sort, k).rounds;
    parallel_costzones(comm_, keyed, tags::zones);
    p_.resize(keyed.size());
    for (std::size_t i = 0; i < keyed.size(); ++i) p_[i] = keyed[i].body;
  }

  void hashed_forces(std::size_t step, bool async) {
    std::optional<HashedTree> tree;
    {
      PhaseScope ps(comm_, report_, Phase::build);
      const DomainBounds b = global_bounds(comm_, p_);
      tree.emplace(Vec3{}, 2.0 * b.half_extent);
      for (const auto& body : p_) tree->insert_body(body);
    }
    {
      PhaseScope ps(comm_, report_, Phase::share);
      distribute_branch_nodes(comm_, p_, *tree, tags::neighbour, tags::branch);
    }
    PhaseScope ps(comm_, report_, Phase::force);
    RemoteCells remote(comm_, *tree, tags::request_for_step(step), tags::reply_for_step(step));
    AsyncStats as;
    for (auto& body : p_) {
      remote.serve();
      const TraversalResult r = async ? async_traverse(body, *tree, cfg_.theta, cfg_.eps, remote, nullptr, &as)
                                      : hashed_traverse(body, *tree, cfg_.theta, cfg_.eps, remote);
      body.acceleration = r.accel;
      body.work = r.work;
      report_.work += r.work;
    }
    done_consensus(comm_, tags::done, {tags::request_for_step(step)}, [&] { remote.serve(); });
    report_.remote_requests += remote.requests();
    report_.repeated_requests += remote.repeated();
    report_.served += remote.served();
    report_.defers += as.defers;
  }

  const SimConfig& cfg_;
  Comm& comm_;
  RankReport& report_;
  std::vector<Body> p_;
};

}  // namespace

SimResult run_simulation(const SimConfig& cfg, std::vector<Body> initial, const Observer& observer,
                         std::size_t observe_every) {
  cfg.validate();
  if (initial.size() != cfg.n) throw Error("initial body count does not match n");
  SimResult result;
  result.ranks.resize(static_cast<std::size_t>(cfg.ranks));
  ClusterOptions opts;
  opts.ranks = cfg.ranks;
  opts.backend = cfg.backend;
  opts.schedule_seed = cfg.schedule_seed;
  const auto start = Clock::now();
  const auto stats = run_cluster(opts, [&](Comm& comm) {
    RankDriver driver(cfg, comm, result.ranks[static_cast<std::size_t>(comm.rank())]);
    driver.run(initial, observer, observe_every, result);
  });
  result.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  for (std::size_t r = 0; r < stats.size(); ++r) result.ranks[r].transport = stats[r];
  return result;
}

}  // namespace nbody
