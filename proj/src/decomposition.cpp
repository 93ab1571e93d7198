#include "nbody/decomposition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "nbody/collectives.hpp"
#include "nbody/error.hpp"

namespace nbody {

Partition costzones(std::span<const std::uint64_t> work, int s) {
  if (s < 1) throw Error("costzones: need at least one partition");
  const std::size_t n = work.size();
  if (static_cast<std::size_t>(s) > n) throw Error("costzones: more partitions than bodies");
  const std::uint64_t total = std::accumulate(work.begin(), work.end(), std::uint64_t{0});
  const double target = static_cast<double>(total) / s;

  Partition p;
  p.z.assign(static_cast<std::size_t>(s) + 1, n);
  p.z[0] = 0;
  int k = 0;
  std::uint64_t w = 0;
  for (std::size_t i = 0; i < n && k < s - 1; ++i) {
    w += work[i];
    if (static_cast<double>(w) >= target) {
      p.z[static_cast<std::size_t>(++k)] = i + 1;
      w = 0;
    }
  }
  return p;
}

void insertion_sort(std::vector<KeyedBody>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!key_less(v[i], v[i - 1])) continue;
    KeyedBody x = std::move(v[i]);
    std::size_t j = i;
    while (j > 0 && key_less(x, v[j - 1])) {
      v[j] = std::move(v[j - 1]);
      --j;
    }
    v[j] = std::move(x);
  }
}

void write_body(ByteWriter& w, const Body& b) {
  w.u64(b.id);
  w.f64(b.mass);
  w.vec3(b.position);
  w.vec3(b.velocity);
  w.vec3(b.acceleration);
  w.u64(b.work);
}

Body read_body(ByteReader& r) {
  Body b;
  b.id = r.u64();
  b.mass = r.f64();
  b.position = r.vec3();
  b.velocity = r.vec3();
  b.acceleration = r.vec3();
  b.work = r.u64();
  return b;
}

Bytes encode_bodies(std::span<const Body> bodies) {
  ByteWriter w(8 + bodies.size() * 96);
  w.u64(bodies.size());
  for (const auto& b : bodies) write_body(w, b);
  return std::move(w).take();
}

std::vector<Body> decode_bodies(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const std::uint64_t n = r.u64();
  if (n > r.remaining() / 96) throw DecodeError("body list: count exceeds payload", 0);
  std::vector<Body> out(n);
  for (auto& b : out) b = read_body(r);
  r.expect_done("body list");
  return out;
}

Bytes encode_keyed(std::span<const KeyedBody> items) {
  ByteWriter w(8 + items.size() * 104);
  w.u64(items.size());
  for (const auto& kb : items) {
    w.u64(kb.key.bits);
    write_body(w, kb.body);
  }
  return std::move(w).take();
}

std::vector<KeyedBody> decode_keyed(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const std::uint64_t n = r.u64();
  if (n > r.remaining() / 104) throw DecodeError("keyed body list: count exceeds payload", 0);
  std::vector<KeyedBody> out(n);
  for (auto& kb : out) {
    kb.key.bits = r.u64();
    kb.body = read_body(r);
  }
  r.expect_done("keyed body list");
  return out;
}

namespace {

bool same_order(const std::vector<KeyedBody>& a, const std::vector<KeyedBody>& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(), [](const KeyedBody& x, const KeyedBody& y) {
    return x.key.bits == y.key.bits && x.body.id == y.body.id;
  });
}

}  // namespace

SortStats parallel_sort(Comm& comm, std::vector<KeyedBody>& v, Tag tag, int k) {
  const int id = comm.rank();
  const int s = comm.size();
  if (k < 1) throw Error("parallel_sort: exchange width must be positive");
  const std::size_t kk = static_cast<std::size_t>(k);
  const std::size_t n = v.size();
  if (s > 1 && n < 2 * kk)
    throw Error("parallel_sort: partition too small for exchange width (rank " + std::to_string(id) + " holds " +
                std::to_string(n) + ", k = " + std::to_string(k) + ")");

  SortStats stats;
  insertion_sort(v);
  bool changed = true;
  while (changed) {
    ++stats.rounds;
    const std::vector<KeyedBody> before = v;
    std::vector<KeyedBody> left(v.begin(), v.begin() + static_cast<long>(std::min(kk, n)));
    std::vector<KeyedBody> right(v.end() - static_cast<long>(std::min(kk, n)), v.end());

    if (id > 0) comm.send(id - 1, tag, encode_keyed(left));
    if (id + 1 < s) comm.send(id + 1, tag, encode_keyed(right));
    if (id > 0) {
      std::vector<KeyedBody> merged = decode_keyed(comm.recv(id - 1, tag));
      if (merged.size() != kk) throw Error("parallel_sort: neighbour sent the wrong exchange width");
      merged.insert(merged.end(), left.begin(), left.end());
      insertion_sort(merged);
      std::move(merged.begin() + static_cast<long>(kk), merged.end(), v.begin());
    }
    if (id + 1 < s) {
      std::vector<KeyedBody> merged = right;
      std::vector<KeyedBody> got = decode_keyed(comm.recv(id + 1, tag));
      if (got.size() != kk) throw Error("parallel_sort: neighbour sent the wrong exchange width");
      merged.insert(merged.end(), got.begin(), got.end());
      insertion_sort(merged);
      std::move(merged.begin(), merged.begin() + static_cast<long>(kk), v.end() - static_cast<long>(kk));
    }
    insertion_sort(v);
    changed = allreduce_or(comm, !same_order(before, v), static_cast<Tag>(tag + 1));
  }
  return stats;
}

CostzoneStats parallel_costzones(Comm& comm, std::vector<KeyedBody>& p, Tag tag) {
  const int id = comm.rank();
  const int s = comm.size();
  const Tag data_tag = static_cast<Tag>(tag + 1);

  std::uint64_t local_total = 0;
  for (const auto& kb : p) local_total += kb.body.work;
  ByteWriter tw;
  tw.u64(local_total);
  const Bytes summed = allreduce(
      comm, std::move(tw).take(),
      [](Bytes a, Bytes b) {
        ByteReader ra(a), rb(b);
        ByteWriter out;
        out.u64(ra.u64() + rb.u64());
        return std::move(out).take();
      },
      tag);
  const std::uint64_t w_tot = ByteReader(summed).u64();

  CostzoneStats stats;
  stats.target = static_cast<double>(w_tot) / s;
  const double w_targ = stats.target;

  auto exhausted = [&] {
    throw Error("parallel_costzones: partition exhausted on rank " + std::to_string(id));
  };

  for (int k = 0; k + 1 < s; ++k) {
    if (id == k) {
      if (p.empty()) exhausted();
      std::uint64_t w = 0;
      std::size_t j = 0;
      bool found = false;
      for (std::size_t i = 0; i < p.size(); ++i) {
        w += p[i].body.work;
        if (!found && static_cast<double>(w) >= w_targ) {
          j = i;
          found = true;
        }
      }
      const double diff = static_cast<double>(w) - w_targ;
      ByteWriter dw;
      dw.f64(diff);
      comm.send(id + 1, data_tag, std::move(dw).take());
      if (diff > 0) {
        std::vector<KeyedBody> suffix(p.begin() + static_cast<long>(j + 1), p.end());
        p.resize(j + 1);
        stats.bodies_sent += suffix.size();
        comm.send(id + 1, data_tag, encode_keyed(suffix));
      } else if (diff < 0) {
        std::vector<KeyedBody> got = decode_keyed(comm.recv(id + 1, data_tag));
        stats.bodies_received += got.size();
        p.insert(p.end(), std::make_move_iterator(got.begin()), std::make_move_iterator(got.end()));
      }
    } else if (id == k + 1) {
      const double diff = ByteReader(comm.recv(id - 1, data_tag)).f64();
      if (diff > 0) {
        std::vector<KeyedBody> got = decode_keyed(comm.recv(id - 1, data_tag));
        stats.bodies_received += got.size();
        got.insert(got.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
        p = std::move(got);
      } else if (diff < 0) {
        std::uint64_t w = 0;
        std::size_t j = p.size();
        for (std::size_t i = 0; i < p.size(); ++i) {
          w += p[i].body.work;
          if (static_cast<double>(w) >= -diff) {
            j = i + 1;
            break;
          }
        }
        std::vector<KeyedBody> prefix(p.begin(), p.begin() + static_cast<long>(j));
        p.erase(p.begin(), p.begin() + static_cast<long>(j));
        stats.bodies_sent += prefix.size();
        comm.send(id - 1, data_tag, encode_keyed(prefix));
      }
      if (p.empty()) exhausted();
    }
    barrier(comm, tag);
  }
  if (p.empty()) exhausted();
  return stats;
}

}  // namespace nbody
