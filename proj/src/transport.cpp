#include "nbody/transport.hpp"

#include <sys/poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>

#include "nbody/error.hpp"
#include "nbody/random.hpp"

namespace nbody {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::setup: return "setup";
    case Phase::decompose: return "decompose";
    case Phase::build: return "build";
    case Phase::share: return "share";
    case Phase::force: return "force";
    case Phase::integrate: return "integrate";
    case Phase::observe: return "observe";
  }
  return "unknown";
}

void PairDigest::add(Tag tag, std::size_t size) {
  ++messages;
  bytes += size;
  const auto mix_byte = [this](std::uint8_t b) {
    hash ^= b;
    hash *= 0x100000001b3ull;
  };
  for (int i = 0; i < 2; ++i) mix_byte(static_cast<std::uint8_t>(tag >> (8 * i)));
  for (int i = 0; i < 8; ++i) mix_byte(static_cast<std::uint8_t>(static_cast<std::uint64_t>(size) >> (8 * i)));
}

std::uint64_t TransportStats::total_messages() const {
  std::uint64_t n = 0;
  for (auto m : messages) n += m;
  return n;
}

std::uint64_t TransportStats::total_bytes() const {
  std::uint64_t n = 0;
  for (auto b : bytes) n += b;
  return n;
}

TagCount TransportStats::tag(Tag t) const {
  auto it = by_tag.find(t);
  return it == by_tag.end() ? TagCount{} : it->second;
}

// Shared by all ranks of one run. Every field is guarded by `mu`.
class ClusterState {
 public:
  using Lock = std::unique_lock<std::mutex>;
  using Pred = std::function<bool()>;

  enum class RunState { ready, running, blocked, finished };

  explicit ClusterState(const ClusterOptions& o)
      : options(o), size(o.ranks), alive(o.ranks), boxes(static_cast<std::size_t>(o.ranks)),
        cvs(static_cast<std::size_t>(o.ranks)), states(static_cast<std::size_t>(o.ranks), RunState::ready),
        waiting(static_cast<std::size_t>(o.ranks)) {
    if (o.schedule_seed) rng.emplace(*o.schedule_seed);
  }

  bool scheduled() const { return rng.has_value(); }

  bool has(int me, int src, Tag tag) const {
    auto& q = boxes[static_cast<std::size_t>(me)];
    auto it = q.find({src, tag});
    return it != q.end() && !it->second.empty();
  }

  bool has_any(int me, Tag tag) const {
    for (const auto& [key, q] : boxes[static_cast<std::size_t>(me)])
      if (key.second == tag && !q.empty()) return true;
    return false;
  }

  Bytes pop(int me, int src, Tag tag) {
    auto& q = boxes[static_cast<std::size_t>(me)][{src, tag}];
    Bytes b = std::move(q.front());
    q.pop_front();
    return b;
  }

  void push(int dst, int src, Tag tag, Bytes payload) {
    boxes[static_cast<std::size_t>(dst)][{src, tag}].push_back(std::move(payload));
    if (!scheduled()) cvs[static_cast<std::size_t>(dst)].notify_all();
  }

  void poison(const std::string& why) {
    if (poisoned) return;
    poisoned = true;
    reason = why;
    for (auto& cv : cvs) cv.notify_all();
  }

  void throw_if_poisoned() const {
    if (poisoned) throw TransportError("transport: " + reason);
  }

  void check_deadlock() {
    if (alive == 0 || inflight != 0) return;
    int stuck = 0;
    for (int r = 0; r < size; ++r) {
      const auto& w = waiting[static_cast<std::size_t>(r)];
      if (w && !w()) ++stuck;
    }
    if (stuck == alive) poison("deadlock: every live rank is waiting for a message that was never sent");
  }

  // Scheduler: hand the baton to a runnable rank chosen by the seeded stream.
  void pass_baton() {
    std::vector<int> candidates;
    for (int r = 0; r < size; ++r) {
      const auto s = states[static_cast<std::size_t>(r)];
      if (s == RunState::ready || (s == RunState::blocked && waiting[static_cast<std::size_t>(r)]())) candidates.push_back(r);
    }
    if (candidates.empty()) {
      current = -1;
      if (alive > 0) poison("deadlock: every live rank is waiting for a message that was never sent");
      return;
    }
    current = candidates[static_cast<std::size_t>(rng->next() % candidates.size())];
    cvs[static_cast<std::size_t>(current)].notify_all();
  }

  void await_turn(Lock& lock, int me) {
    cvs[static_cast<std::size_t>(me)].wait(lock, [&] { return current == me || poisoned; });
    throw_if_poisoned();
    states[static_cast<std::size_t>(me)] = RunState::running;
  }

  void yield(Lock& lock, int me) {
    throw_if_poisoned();
    if (!scheduled()) return;
    states[static_cast<std::size_t>(me)] = RunState::ready;
    pass_baton();
    await_turn(lock, me);
  }

  void block_until(Lock& lock, int me, const Pred& pred) {
    yield(lock, me);
    if (pred()) return;
    auto& slot = waiting[static_cast<std::size_t>(me)];
    slot = pred;
    if (scheduled()) {
      while (!pred()) {
        states[static_cast<std::size_t>(me)] = RunState::blocked;
        pass_baton();
        try {
          await_turn(lock, me);
        } catch (...) {
          slot = nullptr;
          throw;
        }
      }
      slot = nullptr;
      return;
    }
    check_deadlock();
    auto& cv = cvs[static_cast<std::size_t>(me)];
    const auto ready = [&] { return poisoned || pred(); };
    bool ok = true;
    if (options.recv_timeout.count() > 0) ok = cv.wait_for(lock, options.recv_timeout, ready);
    else cv.wait(lock, ready);
    slot = nullptr;
    throw_if_poisoned();
    if (!ok) throw TransportError("transport: receive timed out on rank " + std::to_string(me));
  }

  void finish(int me) {
    states[static_cast<std::size_t>(me)] = RunState::finished;
    --alive;
    if (scheduled()) {
      if (current == me || current == -1) pass_baton();
    } else {
      check_deadlock();
    }
  }

  ClusterOptions options;
  int size;
  int alive;
  int registered = 0;
  std::int64_t inflight = 0;
  bool poisoned = false;
  std::string reason;
  std::vector<std::map<std::pair<int, Tag>, std::deque<Bytes>>> boxes;
  std::vector<std::condition_variable> cvs;
  std::vector<RunState> states;
  std::vector<Pred> waiting;
  std::optional<SplitMix64> rng;
  int current = -1;
  std::mutex mu;

  // Socket backend: sockets[i][j] is rank i's end of the link to rank j.
  std::vector<std::vector<int>> sockets;
};

namespace {

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("transport: socket write failed: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// False on a clean end-of-stream before the first byte.
bool read_all(int fd, std::uint8_t* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, data + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw TransportError("transport: truncated frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("transport: socket read failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

constexpr std::size_t kFrameHeader = 10;  // u32 length, u16 tag, u32 source

void reader_loop(ClusterState& st, int me) {
  std::vector<pollfd> fds;
  for (int peer = 0; peer < st.size; ++peer)
    if (peer != me) fds.push_back({st.sockets[static_cast<std::size_t>(me)][static_cast<std::size_t>(peer)], POLLIN, 0});
  std::size_t open = fds.size();
  try {
    while (open > 0) {
      if (::poll(fds.data(), fds.size(), -1) < 0) {
        if (errno == EINTR) continue;
        throw TransportError("transport: poll failed");
      }
      for (auto& p : fds) {
        if (p.fd < 0 || !(p.revents & (POLLIN | POLLHUP | POLLERR))) continue;
        std::uint8_t head[kFrameHeader];
        if (!read_all(p.fd, head, kFrameHeader)) {
          p.fd = -1;
          --open;
          continue;
        }
        ByteReader hr(std::span<const std::uint8_t>(head, kFrameHeader));
        const std::uint32_t len = hr.u32();
        const Tag tag = hr.u16();
        const auto src = static_cast<int>(hr.u32());
        Bytes payload(len);
        if (len > 0 && !read_all(p.fd, payload.data(), len)) throw TransportError("transport: truncated frame");
        std::lock_guard<std::mutex> g(st.mu);
        st.push(me, src, tag, std::move(payload));
        --st.inflight;
        st.cvs[static_cast<std::size_t>(me)].notify_all();
      }
    }
  } catch (const std::exception& e) {
    std::lock_guard<std::mutex> g(st.mu);
    st.poison(e.what());
  }
}

}  // namespace

Comm::Comm(ClusterState& state, int rank) : state_(state), rank_(rank) {}

int Comm::size() const { return state_.size; }

void Comm::account(int dst, Tag tag, std::size_t size) {
  const auto p = static_cast<std::size_t>(phase_);
  ++stats_.messages[p];
  stats_.bytes[p] += size;
  auto& t = stats_.by_tag[tag];
  ++t.messages;
  t.bytes += size;
  stats_.by_destination[dst].add(tag, size);
}

void Comm::send(int dst, Tag tag, Bytes payload) {
  if (dst < 0 || dst >= state_.size) throw TransportError("transport: send to invalid rank " + std::to_string(dst));
  if (dst == rank_) throw TransportError("transport: send to self");
  ClusterState::Lock lock(state_.mu);
  state_.yield(lock, rank_);
  account(dst, tag, payload.size());
  if (state_.options.backend == Backend::inproc) {
    state_.push(dst, rank_, tag, std::move(payload));
    return;
  }
  if (payload.size() > 0xFFFFFFFFu) throw TransportError("transport: frame too large");
  ++state_.inflight;
  lock.unlock();
  ByteWriter head(kFrameHeader);
  head.u32(static_cast<std::uint32_t>(payload.size()));
  head.u16(tag);
  head.u32(static_cast<std::uint32_t>(rank_));
  const Bytes h = std::move(head).take();
  const int fd = state_.sockets[static_cast<std::size_t>(rank_)][static_cast<std::size_t>(dst)];
  write_all(fd, h.data(), h.size());
  write_all(fd, payload.data(), payload.size());
}

Bytes Comm::recv(int src, Tag tag) {
  if (src < 0 || src >= state_.size || src == rank_)
    throw TransportError("transport: receive from invalid rank " + std::to_string(src));
  ClusterState::Lock lock(state_.mu);
  state_.block_until(lock, rank_, [&] { return state_.has(rank_, src, tag); });
  return state_.pop(rank_, src, tag);
}

std::optional<Bytes> Comm::try_recv(int src, Tag tag) {
  ClusterState::Lock lock(state_.mu);
  state_.yield(lock, rank_);
  if (!state_.has(rank_, src, tag)) return std::nullopt;
  return state_.pop(rank_, src, tag);
}

std::optional<Envelope> Comm::try_recv_any(Tag tag) {
  ClusterState::Lock lock(state_.mu);
  state_.yield(lock, rank_);
  for (int src = 0; src < state_.size; ++src) {
    if (state_.has(rank_, src, tag)) return Envelope{src, tag, state_.pop(rank_, src, tag)};
  }
  return std::nullopt;
}

Envelope Comm::recv_any(Tag tag) {
  ClusterState::Lock lock(state_.mu);
  state_.block_until(lock, rank_, [&] { return state_.has_any(rank_, tag); });
  for (int src = 0; src < state_.size; ++src) {
    if (state_.has(rank_, src, tag)) return Envelope{src, tag, state_.pop(rank_, src, tag)};
  }
  throw TransportError("transport: message vanished");
}

void Comm::wait_any(std::span<const Tag> tags) {
  ClusterState::Lock lock(state_.mu);
  state_.block_until(lock, rank_, [&] {
    for (Tag t : tags)
      if (state_.has_any(rank_, t)) return true;
    return false;
  });
}

std::vector<TransportStats> run_cluster(const ClusterOptions& options, const std::function<void(Comm&)>& body) {
  if (options.ranks < 1) throw Error("run_cluster: need at least one rank");
  if (options.backend == Backend::socket && options.schedule_seed)
    throw Error("run_cluster: the seeded scheduler requires the in-process backend");

  ClusterState st(options);
  std::vector<std::thread> readers;
  if (options.backend == Backend::socket) {
    const auto s = static_cast<std::size_t>(options.ranks);
    st.sockets.assign(s, std::vector<int>(s, -1));
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = i + 1; j < s; ++j) {
        int fds[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0)
          throw TransportError(std::string("transport: socketpair failed: ") + std::strerror(errno));
        st.sockets[i][j] = fds[0];
        st.sockets[j][i] = fds[1];
      }
    for (int r = 0; r < options.ranks; ++r) readers.emplace_back(reader_loop, std::ref(st), r);
  }

  std::vector<std::unique_ptr<Comm>> comms;
  for (int r = 0; r < options.ranks; ++r) comms.push_back(std::make_unique<Comm>(st, r));

  std::exception_ptr first_error;
  std::vector<std::thread> workers;
  for (int r = 0; r < options.ranks; ++r) {
    workers.emplace_back([&, r] {
      try {
        {
          ClusterState::Lock lock(st.mu);
          if (++st.registered == st.size && st.scheduled()) st.pass_baton();
          if (st.scheduled()) st.await_turn(lock, r);
        }
        body(*comms[static_cast<std::size_t>(r)]);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> g(st.mu);
        if (!first_error) first_error = std::current_exception();
        st.poison("rank " + std::to_string(r) + " failed: " + e.what());
      } catch (...) {
        std::lock_guard<std::mutex> g(st.mu);
        if (!first_error) first_error = std::current_exception();
        st.poison("rank " + std::to_string(r) + " failed");
      }
      std::lock_guard<std::mutex> g(st.mu);
      st.finish(r);
    });
  }
  for (auto& w : workers) w.join();

  if (options.backend == Backend::socket) {
    for (auto& row : st.sockets)
      for (int fd : row)
        if (fd >= 0) ::shutdown(fd, SHUT_WR);
    for (auto& t : readers) t.join();
    for (auto& row : st.sockets)
      for (int fd : row)
        if (fd >= 0) ::close(fd);
  }

  if (first_error) std::rethrow_exception(first_error);
  std::vector<TransportStats> out;
  for (auto& c : comms) out.push_back(c->stats());
  return out;
}

}  // namespace nbody
