#include "nbody/initcond.hpp"

#include <cmath>
#include <numbers>

#include "nbody/error.hpp"
#include "nbody/random.hpp"

namespace nbody {

namespace {

Vec3 isotropic(SplitMix64& rng, double length) {
  const double z = 2.0 * rng.uniform() - 1.0;
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double rho = std::sqrt(1.0 - z * z);
  return {length * rho * std::cos(phi), length * rho * std::sin(phi), length * z};
}

// Speed in units of the local escape speed, drawn from g(q) = q^2 (1-q^2)^(7/2)
// by rejection against the constant 0.1 (max g ~ 0.092).
double plummer_speed_fraction(SplitMix64& rng) {
  while (true) {
    const double q = rng.uniform();
    const double g = 0.1 * rng.uniform();
    if (g < q * q * std::pow(1.0 - q * q, 3.5)) return q;
  }
}

}  // namespace

std::vector<Body> plummer_cluster(std::size_t n, Seed seed) {
  if (n == 0) throw Error("plummer_cluster: n must be positive");
  SplitMix64 rng(seed.value);
  const double length_scale = 3.0 * std::numbers::pi / 16.0;
  const double velocity_scale = 1.0 / std::sqrt(length_scale);

  std::vector<Body> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    do {
      const double u = rng.uniform();
      if (u == 0.0) continue;
      r = 1.0 / std::sqrt(std::pow(u, -2.0 / 3.0) - 1.0);
    } while (!(r > 0.0 && r < kPlummerTruncation));

    const double escape = std::sqrt(2.0) * std::pow(1.0 + r * r, -0.25);
    const double speed = plummer_speed_fraction(rng) * escape;

    Body& b = out[i];
    b.id = i;
    b.mass = 1.0 / static_cast<double>(n);
    b.position = isotropic(rng, r * length_scale);
    b.velocity = isotropic(rng, speed * velocity_scale);
  }
  return out;
}

std::vector<Body> two_clusters(const ScenarioConfig& cfg) {
  if (cfg.n_total == 0 || cfg.n_total % 2 != 0)
    throw Error("two_clusters: n_total must be a positive even number");
  const std::size_t half = cfg.n_total / 2;
  SplitMix64 root(cfg.seed.value);
  const Seed seed_a{root.next()};
  const Seed seed_b{root.next()};

  std::vector<Body> all;
  all.reserve(cfg.n_total);
  const auto place = [&](std::vector<Body> cluster, double sign) {
    for (auto& b : cluster) {
      b.id = all.size();
      b.mass *= 0.5;
      b.position += cfg.cluster_offset * (0.5 * sign);
      b.velocity += cfg.relative_velocity * (0.5 * sign);
      all.push_back(b);
    }
  };
  place(plummer_cluster(half, seed_a), -1.0);
  place(plummer_cluster(half, seed_b), +1.0);
  return standardize(std::move(all));
}

std::vector<Body> standardize(std::vector<Body> bodies) {
  if (bodies.size() < 2) throw Error("standardize: need at least two bodies");

  double mass = 0.0;
  for (const auto& b : bodies) mass += b.mass;
  if (!(mass > 0.0)) throw Error("standardize: non-positive total mass");
  for (auto& b : bodies) b.mass /= mass;

  Vec3 com, vcom;
  for (const auto& b : bodies) {
    com += b.position * b.mass;
    vcom += b.velocity * b.mass;
  }
  for (auto& b : bodies) {
    b.position -= com;
    b.velocity -= vcom;
  }

  EnergyReport e = total_energy(bodies, Softening{0.0});
  if (!(e.potential < 0.0)) throw Error("standardize: degenerate input (zero potential)");
  if (!(e.kinetic > 0.0)) throw Error("standardize: degenerate input (zero kinetic energy)");

  const double vscale = std::sqrt(-0.5 * e.potential / e.kinetic);
  for (auto& b : bodies) b.velocity *= vscale;

  // After the virial rescale E_tot = E_pot / 2.
  const double q = (0.5 * e.potential) / -0.25;
  const double vq = 1.0 / std::sqrt(q);
  for (auto& b : bodies) {
    b.position *= q;
    b.velocity *= vq;
  }
  return bodies;
}

}  // namespace nbody
