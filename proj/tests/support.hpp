#pragma once

// Independent oracles and fixtures shared by the test programs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "nbody/morton.hpp"
#include "nbody/physics.hpp"

namespace oracle {

using nbody::Body;
using nbody::Vec3;

/// Central-difference gradient of a scalar field.
inline Vec3 fd_gradient(const std::function<double(const Vec3&)>& f, const Vec3& p, double h) {
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 lo = p, hi = p;
    lo[a] -= h;
    hi[a] += h;
    g[a] = (f(hi) - f(lo)) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const Vec3& got, const Vec3& want) {
  const double scale = std::max(nbody::norm(want), 1e-300);
  return nbody::norm(got - want) / scale;
}

/// Textbook quadrupole by explicit triple loop over components.
inline double quad_entry(const std::vector<nbody::PointMass>& pts, const Vec3& com, int a, int b) {
  double q = 0.0;
  for (const auto& p : pts) {
    const Vec3 x = p.position - com;
    q += p.mass * (3.0 * x[a] * x[b] - (a == b ? nbody::norm2(x) : 0.0));
  }
  return q;
}

/// Bodies with uniform random positions in a cube; masses in (0.5, 1.5)/n.
inline std::vector<Body> random_bodies(std::size_t n, std::uint64_t seed, double half = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-half, half), m(0.5, 1.5), vel(-0.3, 0.3);
  std::vector<Body> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = i;
    out[i].mass = m(rng) / static_cast<double>(n);
    out[i].position = {pos(rng), pos(rng), pos(rng)};
    out[i].velocity = {vel(rng), vel(rng), vel(rng)};
  }
  return out;
}

/// Unsorted all-pairs acceleration on body i, summed j = 0..N-1.
inline Vec3 direct_on(const std::vector<Body>& bodies, std::size_t i, double eps) {
  Vec3 a;
  for (std::size_t j = 0; j < bodies.size(); ++j) {
    if (j == i) continue;
    const Vec3 d = bodies[j].position - bodies[i].position;
    const double r2 = nbody::norm2(d) + eps * eps;
    a += d * (bodies[j].mass / (r2 * std::sqrt(r2)));
  }
  return a;
}

/// Sorts by Morton key inside the padded bounds, ties by id.
inline std::vector<Body> morton_sorted(std::vector<Body> bodies) {
  const nbody::DomainBounds bounds = nbody::bounds_for(bodies);
  const auto keys = nbody::keys_for(bodies, bounds);
  std::vector<nbody::KeyedBody> kb;
  for (std::size_t i = 0; i < bodies.size(); ++i) kb.push_back({keys[i], bodies[i]});
  std::sort(kb.begin(), kb.end(), nbody::key_less);
  for (std::size_t i = 0; i < kb.size(); ++i) bodies[i] = kb[i].body;
  return bodies;
}

}  // namespace oracle
