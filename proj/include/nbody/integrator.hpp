#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>

#include "nbody/physics.hpp"

namespace nbody {

/// Fills `acceleration` (and optionally `work`) from current positions.
using AccelProvider = std::function<void(std::span<Body>)>;

struct TimeStep {
  double dt = 0.01;
  double t_end = 5.0;

  /// Whole steps only: round(t_end / dt).
  std::size_t steps() const { return static_cast<std::size_t>(std::llround(t_end / dt)); }
};

/// v += a * half_dt
void kick(std::span<Body> bodies, double half_dt);

/// r += v * dt
void drift(std::span<Body> bodies, double dt);

/// One kick-drift-kick step. Accelerations must already hold a(k) on entry and
/// hold a(k+1) on return.
void kdk_step(std::span<Body> bodies, double dt, const AccelProvider& accel);

}  // namespace nbody
