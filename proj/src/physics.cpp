#include "nbody/physics.hpp"

#include <cmath>

#include "nbody/error.hpp"

namespace nbody {

double SymTensor::operator()(int a, int b) const {
  if (a > b) std::swap(a, b);
  if (a == 0) return b == 0 ? xx : (b == 1 ? xy : xz);
  if (a == 1) return b == 1 ? yy : yz;
  return zz;
}

SymTensor& SymTensor::operator+=(const SymTensor& o) {
  xx += o.xx;
  xy += o.xy;
  xz += o.xz;
  yy += o.yy;
  yz += o.yz;
  zz += o.zz;
  return *this;
}

namespace {

// m (3 d d^T - |d|^2 I): the quadrupole of a point mass at offset d.
SymTensor point_quadrupole(double m, const Vec3& d) {
  const double r2 = norm2(d);
  SymTensor q;
  q.xx = m * (3.0 * d.x * d.x - r2);
  q.yy = m * (3.0 * d.y * d.y - r2);
  q.zz = m * (3.0 * d.z * d.z - r2);
  q.xy = m * 3.0 * d.x * d.y;
  q.xz = m * 3.0 * d.x * d.z;
  q.yz = m * 3.0 * d.y * d.z;
  return q;
}

}  // namespace

Vec3 pairwise_accel(const Vec3& pos_i, const Vec3& pos_j, double mass_j, Softening eps) {
  const Vec3 d = pos_i - pos_j;
  const double r2 = norm2(d) + eps.eps * eps.eps;
  if (r2 == 0.0) return {};
  const double inv_r = 1.0 / std::sqrt(r2);
  const double inv_r3 = inv_r * inv_r * inv_r;
  return d * (-mass_j * inv_r3);
}

double pairwise_potential(const Vec3& pos, const Vec3& source, double mass, Softening eps) {
  const double r2 = norm2(pos - source) + eps.eps * eps.eps;
  if (r2 == 0.0) return 0.0;
  return -mass / std::sqrt(r2);
}

MassMoments moments_from_bodies(std::span<const PointMass> bodies) {
  if (bodies.empty()) throw Error("moments_from_bodies: empty ensemble");
  MassMoments m;
  Vec3 weighted;
  for (const auto& b : bodies) {
    m.total_mass += b.mass;
    weighted += b.position * b.mass;
  }
  m.com = weighted / m.total_mass;
  for (const auto& b : bodies) m.quad += point_quadrupole(b.mass, b.position - m.com);
  return m;
}

MassMoments combine_moments(std::span<const MassMoments> children) {
  if (children.empty()) throw Error("combine_moments: empty ensemble");
  if (children.size() == 1) return children.front();
  MassMoments m;
  Vec3 weighted;
  for (const auto& c : children) {
    m.total_mass += c.total_mass;
    weighted += c.com * c.total_mass;
  }
  m.com = weighted / m.total_mass;
  for (const auto& c : children) {
    m.quad += c.quad;
    m.quad += point_quadrupole(c.total_mass, c.com - m.com);
  }
  return m;
}

Vec3 cell_accel(const Vec3& pos, const MassMoments& moments) {
  const Vec3 r = pos - moments.com;
  const double r2 = norm2(r);
  if (r2 == 0.0) throw Error("cell_accel: evaluation at expansion centre");
  const double inv_r = 1.0 / std::sqrt(r2);
  const double inv_r2 = inv_r * inv_r;
  const double inv_r3 = inv_r2 * inv_r;
  const double inv_r5 = inv_r3 * inv_r2;
  const double inv_r7 = inv_r5 * inv_r2;

  const SymTensor& q = moments.quad;
  const Vec3 qr{q.xx * r.x + q.xy * r.y + q.xz * r.z,
                q.xy * r.x + q.yy * r.y + q.yz * r.z,
                q.xz * r.x + q.yz * r.y + q.zz * r.z};
  const double rqr = dot(r, qr);

  // -grad of (-M/r - r.Q.r / (2 r^5))
  return r * (-moments.total_mass * inv_r3 - 2.5 * rqr * inv_r7) + qr * inv_r5;
}

double cell_potential(const Vec3& pos, const MassMoments& moments) {
  const Vec3 r = pos - moments.com;
  const double r2 = norm2(r);
  if (r2 == 0.0) throw Error("cell_potential: evaluation at expansion centre");
  const double rr = std::sqrt(r2);
  const SymTensor& q = moments.quad;
  const double rqr = q.xx * r.x * r.x + q.yy * r.y * r.y + q.zz * r.z * r.z +
                     2.0 * (q.xy * r.x * r.y + q.xz * r.x * r.z + q.yz * r.y * r.z);
  return -moments.total_mass / rr - rqr / (2.0 * r2 * r2 * rr);
}

EnergyReport total_energy(std::span<const Body> bodies, Softening eps) {
  EnergyReport e;
  for (const auto& b : bodies) e.kinetic += 0.5 * b.mass * norm2(b.velocity);
  const double eps2 = eps.eps * eps.eps;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = i + 1; j < bodies.size(); ++j) {
      const double r2 = norm2(bodies[i].position - bodies[j].position) + eps2;
      if (r2 > 0.0) row -= bodies[j].mass / std::sqrt(r2);
    }
    e.potential += bodies[i].mass * row;
  }
  e.total = e.kinetic + e.potential;
  return e;
}

std::vector<Vec3> direct_accelerations(std::span<const Body> bodies, Softening eps) {
  std::vector<Vec3> acc(bodies.size());
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    for (std::size_t j = 0; j < bodies.size(); ++j) {
      if (i == j) continue;
      acc[i] += pairwise_accel(bodies[i].position, bodies[j].position, bodies[j].mass, eps);
    }
  }
  return acc;
}

}  // namespace nbody
