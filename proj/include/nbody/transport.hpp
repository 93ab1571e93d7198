#pragma once

// Rank-addressed message passing. Every rank is a thread that owns one Comm;
// Comm is the only channel between ranks.

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nbody/wire.hpp"

namespace nbody {

using Tag = std::uint16_t;

/// Phases used to bucket message accounting and timings.
enum class Phase : int { setup, decompose, build, share, force, integrate, observe };
inline constexpr std::size_t kPhaseCount = 7;
const char* phase_name(Phase p);

struct Envelope {
  int source = -1;
  Tag tag = 0;
  Bytes payload;
};

/// Order-sensitive digest of the (tag, size) sequence sent to one destination.
struct PairDigest {
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  std::uint64_t hash = 0xcbf29ce484222325ull;  // FNV-1a offset basis

  void add(Tag tag, std::size_t size);
  friend bool operator==(const PairDigest&, const PairDigest&) = default;
};

struct TagCount {
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  friend bool operator==(const TagCount&, const TagCount&) = default;
};

/// What one rank sent.
struct TransportStats {
  std::array<std::uint64_t, kPhaseCount> messages{};
  std::array<std::uint64_t, kPhaseCount> bytes{};
  std::map<Tag, TagCount> by_tag;
  std::map<int, PairDigest> by_destination;

  std::uint64_t total_messages() const;
  std::uint64_t total_bytes() const;
  TagCount tag(Tag t) const;
};

enum class Backend { inproc, socket };

struct ClusterOptions {
  int ranks = 1;
  Backend backend = Backend::inproc;
  /// When set, one rank runs at a time and the next runner is drawn from this
  /// seed at every transport call, giving a reproducible interleaving.
  std::optional<std::uint64_t> schedule_seed;
  /// Zero means wait forever (deadlock detection still applies).
  std::chrono::milliseconds recv_timeout{0};
};

class ClusterState;

class Comm {
 public:
  Comm(ClusterState& state, int rank);
  Comm(const Comm&) = delete;
  Comm& operator=(const Comm&) = delete;

  int rank() const { return rank_; }
  int size() const;

  /// Non-blocking; the payload is moved into the destination's queue.
  void send(int dst, Tag tag, Bytes payload);

  /// Blocks for the oldest message from `src` on `tag`.
  Bytes recv(int src, Tag tag);
  std::optional<Bytes> try_recv(int src, Tag tag);

  /// Oldest message on `tag` from the lowest-numbered source that has one.
  std::optional<Envelope> try_recv_any(Tag tag);
  Envelope recv_any(Tag tag);

  /// Blocks until a message on one of `tags` is queued; consumes nothing.
  void wait_any(std::span<const Tag> tags);

  void set_phase(Phase p) { phase_ = p; }
  Phase phase() const { return phase_; }
  const TransportStats& stats() const { return stats_; }

 private:
  void account(int dst, Tag tag, std::size_t size);

  ClusterState& state_;
  int rank_;
  Phase phase_ = Phase::setup;
  TransportStats stats_;
};

/// Runs `body` on `options.ranks` workers and joins them. The first failure is
/// rethrown after every worker has stopped; the others see a TransportError.
/// Returns the per-rank send statistics.
std::vector<TransportStats> run_cluster(const ClusterOptions& options, const std::function<void(Comm&)>& body);

}  // namespace nbody
