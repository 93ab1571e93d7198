#include "nbody/collectives.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "nbody/error.hpp"

namespace nbody {

namespace {

int relative(int rank, int root, int size) { return (rank - root + size) % size; }
int absolute(int rel, int root, int size) { return (rel + root) % size; }

void check_root(const Comm& comm, int root) {
  if (root < 0 || root >= comm.size()) throw TransportError("collective: invalid root " + std::to_string(root));
}

Bytes scatter_impl(Comm& comm, int root, std::vector<Bytes> parts, Tag tag, bool regular) {
  check_root(comm, root);
  if (comm.rank() != root) return comm.recv(root, tag);
  if (parts.size() != static_cast<std::size_t>(comm.size()))
    throw TransportError("scatter: need one part per rank");
  if (regular) {
    for (const auto& p : parts)
      if (p.size() != parts.front().size()) throw TransportError("scatter: size mismatch in regular scatter");
  }
  for (int r = 0; r < comm.size(); ++r)
    if (r != root) comm.send(r, tag, std::move(parts[static_cast<std::size_t>(r)]));
  return std::move(parts[static_cast<std::size_t>(root)]);
}

std::vector<Bytes> gather_impl(Comm& comm, int root, Bytes payload, Tag tag, bool regular) {
  check_root(comm, root);
  if (comm.rank() != root) {
    comm.send(root, tag, std::move(payload));
    return {};
  }
  std::vector<Bytes> out(static_cast<std::size_t>(comm.size()));
  const std::size_t expected = payload.size();
  out[static_cast<std::size_t>(root)] = std::move(payload);
  for (int r = 0; r < comm.size(); ++r) {
    if (r == root) continue;
    out[static_cast<std::size_t>(r)] = comm.recv(r, tag);
    if (regular && out[static_cast<std::size_t>(r)].size() != expected)
      throw TransportError("gather: size mismatch in regular gather");
  }
  return out;
}

Bytes u64_bytes(std::uint64_t v) {
  ByteWriter w;
  w.u64(v);
  return std::move(w).take();
}

std::uint64_t bytes_u64(const Bytes& b) {
  ByteReader r(b);
  return r.u64();
}

}  // namespace

Bytes broadcast(Comm& comm, int root, Bytes payload, Tag tag) {
  check_root(comm, root);
  const int s = comm.size();
  const int me = relative(comm.rank(), root, s);
  int mask = 1;
  while (mask < s) {
    if (me & mask) {
      payload = comm.recv(absolute(me - mask, root, s), tag);
      break;
    }
    mask <<= 1;
  }
  mask >>= 1;
  while (mask > 0) {
    if (me + mask < s) comm.send(absolute(me + mask, root, s), tag, payload);
    mask >>= 1;
  }
  return payload;
}

Bytes scatter(Comm& comm, int root, std::vector<Bytes> parts, Tag tag) {
  return scatter_impl(comm, root, std::move(parts), tag, true);
}

Bytes scatterv(Comm& comm, int root, std::vector<Bytes> parts, Tag tag) {
  return scatter_impl(comm, root, std::move(parts), tag, false);
}

std::vector<Bytes> gather(Comm& comm, int root, Bytes payload, Tag tag) {
  return gather_impl(comm, root, std::move(payload), tag, true);
}

std::vector<Bytes> gatherv(Comm& comm, int root, Bytes payload, Tag tag) {
  return gather_impl(comm, root, std::move(payload), tag, false);
}

Bytes reduce(Comm& comm, int root, Bytes payload, const Combine& combine, Tag tag) {
  check_root(comm, root);
  const int s = comm.size();
  const int me = relative(comm.rank(), root, s);
  for (int k = 1; k < s; k <<= 1) {
    if (me % (2 * k) == k) {
      comm.send(absolute(me - k, root, s), tag, std::move(payload));
      return {};
    }
    if (me % (2 * k) == 0 && me + k < s) {
      payload = combine(std::move(payload), comm.recv(absolute(me + k, root, s), tag));
    }
  }
  return payload;
}

Bytes allreduce(Comm& comm, Bytes payload, const Combine& combine, Tag tag) {
  return broadcast(comm, 0, reduce(comm, 0, std::move(payload), combine, tag), tag);
}

void barrier(Comm& comm, Tag tag) {
  allreduce(comm, {}, [](Bytes a, Bytes) { return a; }, tag);
}

bool allreduce_or(Comm& comm, bool value, Tag tag) {
  const Bytes out = allreduce(
      comm, Bytes{static_cast<std::uint8_t>(value)},
      [](Bytes a, Bytes b) { return Bytes{static_cast<std::uint8_t>(a.at(0) | b.at(0))}; }, tag);
  return out.at(0) != 0;
}

double allreduce_max(Comm& comm, double value, Tag tag) {
  const Bytes out = allreduce(
      comm, u64_bytes(std::bit_cast<std::uint64_t>(value)),
      [](Bytes a, Bytes b) {
        const double x = std::bit_cast<double>(bytes_u64(a));
        const double y = std::bit_cast<double>(bytes_u64(b));
        return u64_bytes(std::bit_cast<std::uint64_t>(std::max(x, y)));
      },
      tag);
  return std::bit_cast<double>(bytes_u64(out));
}

std::uint64_t allreduce_min(Comm& comm, std::uint64_t value, Tag tag) {
  const Bytes out = allreduce(
      comm, u64_bytes(value), [](Bytes a, Bytes b) { return u64_bytes(std::min(bytes_u64(a), bytes_u64(b))); },
      tag);
  return bytes_u64(out);
}

std::size_t try_serve(Comm& comm, Tag request_tag, Tag reply_tag, const RequestHandler& handler) {
  std::size_t served = 0;
  while (auto env = comm.try_recv_any(request_tag)) {
    comm.send(env->source, reply_tag, handler(env->source, env->payload));
    ++served;
  }
  return served;
}

void done_consensus(Comm& comm, Tag tag, const std::vector<Tag>& serve_tags, const std::function<void()>& serve) {
  const int s = comm.size();
  if (s == 1) return;
  std::vector<Tag> wake = serve_tags;
  wake.push_back(tag);
  if (comm.rank() != 0) {
    comm.send(0, tag, {});
    while (true) {
      if (serve) serve();
      if (comm.try_recv(0, tag)) return;
      comm.wait_any(wake);
    }
  }
  int tokens = 0;
  while (true) {
    if (serve) serve();
    while (comm.try_recv_any(tag)) ++tokens;
    if (tokens == s - 1) break;
    comm.wait_any(wake);
  }
  for (int r = 1; r < s; ++r) comm.send(r, tag, {});
}

}  // namespace nbody
