#pragma once

#include <cstdint>
#include <vector>

#include "nbody/physics.hpp"

namespace nbody {

struct Seed {
  std::uint64_t value = 1;
};

struct ScenarioConfig {
  std::size_t n_total = 0;
  Seed seed;
  Vec3 cluster_offset{2.0, 2.0, 2.0};
  Vec3 relative_velocity{0.0, 0.0, 0.0};
};

/// Radii beyond this many scale radii are resampled.
inline constexpr double kPlummerTruncation = 10.0;

/// Equal-mass Plummer sphere of total mass 1, scaled by 3*pi/16 in length
/// (and the matching velocity factor) so that it sits near virial units.
/// Body ids are 0..n-1.
std::vector<Body> plummer_cluster(std::size_t n, Seed seed);

/// Two Plummer spheres of n_total/2 bodies each, separated by
/// +-cluster_offset/2 and boosted by +-relative_velocity/2, then standardized.
std::vector<Body> two_clusters(const ScenarioConfig& cfg);

/// Rescales to standard units: total mass 1, centre-of-mass frame,
/// E_kin = -E_pot/2, E_tot = -1/4. The potential used here is unsoftened.
std::vector<Body> standardize(std::vector<Body> bodies);

}  // namespace nbody
