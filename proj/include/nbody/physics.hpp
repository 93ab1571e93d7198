#pragma once

// Gravitational kernels in standard units (G = 1).

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "nbody/vec3.hpp"

namespace nbody {

struct Body {
  std::uint64_t id = 0;  // original index; tie-breaks the spatial order
  double mass = 0.0;
  Vec3 position;
  Vec3 velocity;
  Vec3 acceleration;
  std::uint64_t work = 0;  // weighted interaction count of the last force phase
};

/// A point mass as seen by a force kernel.
struct PointMass {
  double mass = 0.0;
  Vec3 position;
};

struct Softening {
  double eps = 0.0;
};

/// Symmetric 3x3 tensor stored as its six unique entries.
struct SymTensor {
  double xx = 0.0, xy = 0.0, xz = 0.0, yy = 0.0, yz = 0.0, zz = 0.0;

  double operator()(int a, int b) const;
  double trace() const { return xx + yy + zz; }
  SymTensor& operator+=(const SymTensor& o);
  friend bool operator==(const SymTensor&, const SymTensor&) = default;
};

/// Monopole and quadrupole of a mass ensemble, expanded about its own centre
/// of mass so the dipole vanishes.
struct MassMoments {
  double total_mass = 0.0;
  Vec3 com;
  SymTensor quad;

  friend bool operator==(const MassMoments&, const MassMoments&) = default;
};

struct EnergyReport {
  double kinetic = 0.0;
  double potential = 0.0;
  double total = 0.0;
};

/// Softened acceleration on a body at `pos_i` due to mass `mass_j` at `pos_j`.
/// Zero for coincident positions.
Vec3 pairwise_accel(const Vec3& pos_i, const Vec3& pos_j, double mass_j, Softening eps);

/// Softened potential of a point mass, the function `pairwise_accel` is the
/// negative gradient of.
double pairwise_potential(const Vec3& pos, const Vec3& source, double mass, Softening eps);

MassMoments moments_from_bodies(std::span<const PointMass> bodies);

/// Moments of the union of several ensembles. Each child quadrupole is shifted
/// to the parent centre of mass (parallel-axis) before summation; children are
/// accumulated in the order given.
MassMoments combine_moments(std::span<const MassMoments> children);

/// Acceleration -grad(Phi_2) of the monopole + quadrupole far field at `pos`.
/// Unsoftened. Throws if `pos` coincides with the expansion centre.
Vec3 cell_accel(const Vec3& pos, const MassMoments& moments);

/// Truncated far-field potential Phi_2 (monopole + quadrupole).
double cell_potential(const Vec3& pos, const MassMoments& moments);

/// Kinetic, potential (unordered pairs, softened) and total energy.
EnergyReport total_energy(std::span<const Body> bodies, Softening eps);

/// O(N^2) reference accelerations; the accumulation order is j = 0..N-1.
std::vector<Vec3> direct_accelerations(std::span<const Body> bodies, Softening eps);

}  // namespace nbody
