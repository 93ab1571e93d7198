#pragma once

// Collective operations composed from point-to-point messages. Every rank of
// the communicator must make the same sequence of collective calls, each with
// the same tag.

#include <functional>
#include <vector>

#include "nbody/transport.hpp"

namespace nbody {

/// Binomial-tree broadcast; the root's payload is returned on every rank.
Bytes broadcast(Comm& comm, int root, Bytes payload, Tag tag);

/// Regular scatter: every part must have the same size.
Bytes scatter(Comm& comm, int root, std::vector<Bytes> parts, Tag tag);
/// Irregular scatter: parts may differ in size, including empty.
Bytes scatterv(Comm& comm, int root, std::vector<Bytes> parts, Tag tag);

/// Regular gather: all payloads must have the root's size. Empty on non-roots.
std::vector<Bytes> gather(Comm& comm, int root, Bytes payload, Tag tag);
std::vector<Bytes> gatherv(Comm& comm, int root, Bytes payload, Tag tag);

using Combine = std::function<Bytes(Bytes lower, Bytes higher)>;

/// Binary-tree reduction. At round k (k = 1, 2, 4, ...) the rank at relative
/// position i (i a multiple of 2k) absorbs i + k as combine(mine, theirs).
/// The result is meaningful on the root only.
Bytes reduce(Comm& comm, int root, Bytes payload, const Combine& combine, Tag tag);
Bytes allreduce(Comm& comm, Bytes payload, const Combine& combine, Tag tag);

void barrier(Comm& comm, Tag tag);

bool allreduce_or(Comm& comm, bool value, Tag tag);
double allreduce_max(Comm& comm, double value, Tag tag);
std::uint64_t allreduce_min(Comm& comm, std::uint64_t value, Tag tag);

/// Answers every queued request on `request_tag` with handler(source, payload),
/// sent back on `reply_tag`. Never blocks.
using RequestHandler = std::function<Bytes(int source, const Bytes& request)>;
std::size_t try_serve(Comm& comm, Tag request_tag, Tag reply_tag, const RequestHandler& handler);

/// Termination barrier for ranks that keep answering requests while they wait.
/// Every rank sends a token to rank 0, which releases everyone once all tokens
/// are in. `serve` runs whenever a message on one of `serve_tags` may be
/// pending.
void done_consensus(Comm& comm, Tag tag, const std::vector<Tag>& serve_tags, const std::function<void()>& serve);

}  // namespace nbody
