#pragma once

// The eight parallel drivers, from the direct ring (algorithm 0) to the
// hashed octree with latency-hiding traversal (algorithm 7).

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "nbody/decomposition.hpp"
#include "nbody/hashed_octree.hpp"
#include "nbody/initcond.hpp"
#include "nbody/octree.hpp"
#include "nbody/transport.hpp"

namespace nbody {

namespace tags {
inline constexpr Tag scatter = 1;
inline constexpr Tag gather = 2;
inline constexpr Tag ring = 3;
inline constexpr Tag tree = 4;  // the broadcast global tree
inline constexpr Tag merge = 5;
inline constexpr Tag bounds = 6;
inline constexpr Tag sort = 7;   // and 8
inline constexpr Tag zones = 9;  // and 10
inline constexpr Tag neighbour = 11;
inline constexpr Tag branch = 12;
inline constexpr Tag request = 13;  // 13/14 on even steps, 15/16 on odd steps
inline constexpr Tag reply = 14;
inline constexpr Tag done = 17;
inline constexpr Tag observe = 18;
inline constexpr Tag width = 19;

inline Tag request_for_step(std::size_t step) { return static_cast<Tag>(request + 2 * (step & 1)); }
inline Tag reply_for_step(std::size_t step) { return static_cast<Tag>(reply + 2 * (step & 1)); }
}  // namespace tags

inline constexpr int kAlgorithmCount = 8;

struct SimConfig {
  int algorithm = 7;
  std::size_t n = 2000;
  int ranks = 1;
  double theta = 0.5;
  double dt = 0.01;
  std::size_t steps = 500;
  Softening eps{0.05};
  Seed seed{1};
  Backend backend = Backend::inproc;
  std::optional<std::uint64_t> schedule_seed;
  int exchange_width = kDefaultExchangeWidth;

  /// Throws Error describing the first invalid field.
  void validate() const;
};

/// Two-cluster scenario of cfg.n bodies from cfg.seed.
std::vector<Body> initial_bodies(const SimConfig& cfg);

/// Called on rank 0 with every body ordered by id.
using Observer = std::function<void(std::size_t step, double time, std::span<const Body> bodies)>;

struct RankReport {
  std::array<double, kPhaseCount> seconds{};
  TransportStats transport;
  std::uint64_t work = 0;  // weighted interactions over all force phases
  std::uint64_t merge_visited = 0;
  std::uint64_t remote_requests = 0;
  std::uint64_t repeated_requests = 0;  // same key asked twice within a step
  std::uint64_t defers = 0;
  std::uint64_t served = 0;
  std::uint64_t sort_rounds = 0;
  std::size_t max_local_bodies = 0;
};

struct SimResult {
  std::vector<Body> bodies;  // final state ordered by id
  std::vector<RankReport> ranks;
  double wall_seconds = 0.0;
};

/// Runs cfg.steps kick-drift-kick steps on cfg.ranks workers. The observer,
/// when given, sees step 0 and every `observe_every`-th step.
SimResult run_simulation(const SimConfig& cfg, std::vector<Body> initial, const Observer& observer = {},
                         std::size_t observe_every = 0);

/// Child requests and replies for one force phase of a hashed tree.
class RemoteCells {
 public:
  RemoteCells(Comm& comm, HashedTree& tree, Tag request_tag, Tag reply_tag);

  /// Answers every queued request from the local tree.
  void serve();
  /// Sends one request for the children of `key` unless one is outstanding.
  void request(HKey key);
  /// Serves and installs replies until the children of `key` are local.
  void await(HKey key);

  std::uint64_t requests() const { return requests_; }
  std::uint64_t repeated() const { return repeated_; }
  std::uint64_t served() const { return served_; }

 private:
  void drain_replies();

  Comm& comm_;
  HashedTree& tree_;
  Tag request_tag_;
  Tag reply_tag_;
  std::vector<HKey> asked_;
  std::uint64_t requests_ = 0;
  std::uint64_t repeated_ = 0;
  std::uint64_t served_ = 0;
};

/// Recursive descent that blocks on each missing child batch.
TraversalResult hashed_traverse(const Body& body, HashedTree& tree, double theta, Softening eps,
                                RemoteCells& remote, InteractionLog* log = nullptr);

struct AsyncStats {
  std::uint64_t defers = 0;
};

/// Walk-list traversal: cells with remote children are requested on first
/// sight and parked on a defer list, which is drained only when the walk list
/// is empty. Contributions are summed in depth-first order of the interacting
/// cells, so the result matches hashed_traverse exactly.
TraversalResult async_traverse(const Body& body, HashedTree& tree, double theta, Softening eps,
                               RemoteCells& remote, InteractionLog* log = nullptr, AsyncStats* stats = nullptr);

/// Depth-first position order of two disjoint cells.
bool depth_first_before(HKey a, HKey b);

}  // namespace nbody
