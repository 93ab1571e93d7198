#include <cmath>
#include <numbers>

#include "doctest.h"
#include "nbody/integrator.hpp"

using namespace nbody;

namespace {

Body at_rest() {
  Body b;
  b.mass = 1.0;
  return b;
}

void uniform_field(std::span<Body> bodies) {
  for (auto& b : bodies) b.acceleration = {0, 0, -1};
}

void two_body(std::span<Body> bodies) {
  bodies[0].acceleration = pairwise_accel(bodies[0].position, bodies[1].position, bodies[1].mass, Softening{});
  bodies[1].acceleration = pairwise_accel(bodies[1].position, bodies[0].position, bodies[0].mass, Softening{});
}

// Unit masses separated by 2 on a circular orbit: v^2 / 1 = 1 / 4.
std::vector<Body> circular_pair() {
  std::vector<Body> b(2, at_rest());
  b[0].id = 0;
  b[1].id = 1;
  b[0].position = {-1, 0, 0};
  b[1].position = {1, 0, 0};
  b[0].velocity = {0, -0.5, 0};
  b[1].velocity = {0, 0.5, 0};
  return b;
}

double energy(const std::vector<Body>& b) { return total_energy(b, Softening{}).total; }

// Position error against the analytic circular solution after one period
// (4*pi). On an exactly circular orbit the energy error of leapfrog is
// higher order, so the phase error is the quantity that exposes the order.
double orbit_error(double dt) {
  auto b = circular_pair();
  two_body(b);
  const double period = 4.0 * std::numbers::pi;
  const auto steps = static_cast<int>(std::llround(period / dt));
  for (int i = 0; i < steps; ++i) kdk_step(b, dt, two_body);
  const double t = steps * dt;
  const Vec3 exact{std::cos(t * 0.5), std::sin(t * 0.5), 0.0};
  return norm(b[1].position - exact);
}

// Energy error of an eccentric orbit at its first pericentre passage.
double eccentric_energy_error(double dt) {
  auto b = circular_pair();
  b[0].velocity = {0, -0.3, 0};
  b[1].velocity = {0, 0.3, 0};
  two_body(b);
  const double e0 = energy(b);
  double worst = 0.0;
  const auto steps = static_cast<int>(std::llround(2.0 / dt));
  for (int i = 0; i < steps; ++i) {
    kdk_step(b, dt, two_body);
    worst = std::max(worst, std::abs(energy(b) - e0));
  }
  return worst;
}

}  // namespace

TEST_CASE("kick and drift") {
  std::vector<Body> b(1, at_rest());
  b[0].acceleration = {0, 0, -1};
  kick(b, 0.5);
  CHECK(b[0].velocity == Vec3{0, 0, -0.5});
  b[0].acceleration = {};
  kick(b, 0.5);
  CHECK(b[0].velocity == Vec3{0, 0, -0.5});

  std::vector<Body> c(1, at_rest()), d(1, at_rest());
  c[0].acceleration = d[0].acceleration = {0.25, -3.0, 1.0};
  kick(c, 0.5);
  kick(c, 0.5);
  kick(d, 1.0);
  CHECK(c[0].velocity == d[0].velocity);

  std::vector<Body> e(1, at_rest());
  e[0].velocity = {1, 2, 3};
  drift(e, 0.1);
  CHECK(e[0].position.x == doctest::Approx(0.1));
  CHECK(e[0].position.y == doctest::Approx(0.2));
  CHECK(e[0].position.z == doctest::Approx(0.3));
  e[0].position = {0.3, 0.7, -1.1};
  const Vec3 start = e[0].position;
  e[0].velocity = {0.5, 0.25, 2.0};
  drift(e, 0.125);
  drift(e, -0.125);
  CHECK(e[0].position == start);
}

TEST_CASE("kdk is exact for a constant field and leaves mass and work alone") {
  std::vector<Body> b(1, at_rest());
  b[0].work = 17;
  uniform_field(b);
  kdk_step(b, 1.0, uniform_field);
  CHECK(b[0].position == Vec3{0, 0, -0.5});
  CHECK(b[0].velocity == Vec3{0, 0, -1});
  CHECK(b[0].mass == 1.0);
  CHECK(b[0].work == 17);
}

TEST_CASE("circular orbit keeps its radius") {
  auto b = circular_pair();
  two_body(b);
  for (int i = 0; i < 1000; ++i) kdk_step(b, 0.01, two_body);
  const double sep = norm(b[0].position - b[1].position);
  CHECK(std::abs(sep - 2.0) / 2.0 < 1e-3);
}

TEST_CASE("leapfrog converges at second order") {
  const double ratio = orbit_error(0.02) / orbit_error(0.01);
  CHECK(ratio >= 3.5);
  CHECK(ratio <= 4.5);
  const double eratio = eccentric_energy_error(0.002) / eccentric_energy_error(0.001);
  CHECK(eratio >= 3.5);
  CHECK(eratio <= 4.5);
}

TEST_CASE("forward then backward returns to the start") {
  auto b = circular_pair();
  b[0].velocity = {0.1, -0.4, 0.05};
  const auto start = b;
  two_body(b);
  for (int i = 0; i < 200; ++i) kdk_step(b, 0.01, two_body);
  for (int i = 0; i < 200; ++i) kdk_step(b, -0.01, two_body);
  for (std::size_t i = 0; i < b.size(); ++i) {
    CHECK(norm(b[i].position - start[i].position) <= 1e-10 * norm(start[i].position));
    CHECK(norm(b[i].velocity - start[i].velocity) <= 1e-10 * norm(start[i].velocity));
  }
}

TEST_CASE("step count rounds t_end / dt") {
  CHECK(TimeStep{0.01, 5.0}.steps() == 500);
  CHECK(TimeStep{0.3, 1.0}.steps() == 3);
}
