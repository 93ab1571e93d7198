#include "nbody/integrator.hpp"

namespace nbody {

void kick(std::span<Body> bodies, double half_dt) {
  for (auto& b : bodies) b.velocity += b.acceleration * half_dt;
}

void drift(std::span<Body> bodies, double dt) {
  for (auto& b : bodies) b.position += b.velocity * dt;
}

void kdk_step(std::span<Body> bodies, double dt, const AccelProvider& accel) {
  kick(bodies, 0.5 * dt);
  drift(bodies, dt);
  accel(bodies);
  kick(bodies, 0.5 * dt);
}

}  // namespace nbody
