#include <algorithm>
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "nbody/error.hpp"
#include "nbody/initcond.hpp"

using namespace nbody;

namespace {

void check_standard(const std::vector<Body>& b) {
  double m = 0.0;
  Vec3 p, r;
  for (const auto& x : b) {
    m += x.mass;
    p += x.velocity * x.mass;
    r += x.position * x.mass;
  }
  const EnergyReport e = total_energy(b, Softening{0.0});
  CHECK(std::abs(m - 1.0) < 1e-12);
  CHECK(norm(p) < 1e-12);
  CHECK(norm(r) < 1e-12);
  CHECK(std::abs(e.kinetic + 0.5 * e.potential) < 1e-12);
  CHECK(std::abs(e.total + 0.25) < 1e-12);
}

bool bit_identical(const std::vector<Body>& a, const std::vector<Body>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id || std::memcmp(&a[i].mass, &b[i].mass, sizeof(double)) != 0 ||
        !(a[i].position == b[i].position) || !(a[i].velocity == b[i].velocity))
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("plummer_cluster basics") {
  CHECK_THROWS_AS(plummer_cluster(0, Seed{1}), Error);
  const auto one = plummer_cluster(1, Seed{4});
  REQUIRE(one.size() == 1);
  CHECK(is_finite(one[0].position));
  CHECK(is_finite(one[0].velocity));
  CHECK(one[0].mass == 1.0);
  CHECK(bit_identical(plummer_cluster(500, Seed{9}), plummer_cluster(500, Seed{9})));
  CHECK_FALSE(bit_identical(plummer_cluster(500, Seed{9}), plummer_cluster(500, Seed{10})));
}

TEST_CASE("plummer median radius matches the analytic half-mass radius") {
  // Inverse CDF at u = 1/2, in the 3*pi/16 length units the sampler emits.
  const double analytic = 1.0 / std::sqrt(std::pow(2.0, 2.0 / 3.0) - 1.0) * 3.0 * 3.14159265358979323846 / 16.0;
  CHECK(analytic == doctest::Approx(0.7686).epsilon(1e-3));
  const auto bodies = plummer_cluster(10000, Seed{42});
  std::vector<double> r;
  for (const auto& b : bodies) r.push_back(norm(b.position));
  std::nth_element(r.begin(), r.begin() + 5000, r.end());
  CHECK(std::abs(r[5000] - analytic) / analytic < 0.10);
}

TEST_CASE("plummer sample is close to virial equilibrium") {
  const auto bodies = plummer_cluster(4000, Seed{3});
  const EnergyReport e = total_energy(bodies, Softening{0.0});
  CHECK(2.0 * e.kinetic / -e.potential == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("two_clusters") {
  CHECK_THROWS_AS(two_clusters(ScenarioConfig{3, Seed{1}}), Error);
  CHECK_THROWS_AS(two_clusters(ScenarioConfig{0, Seed{1}}), Error);

  const auto pair = two_clusters(ScenarioConfig{2, Seed{1}});
  REQUIRE(pair.size() == 2);
  CHECK(norm(pair[0].position + pair[1].position) < 1e-12);
  check_standard(pair);

  ScenarioConfig cfg{2000, Seed{7}};
  const auto bodies = two_clusters(cfg);
  check_standard(bodies);
  for (std::size_t i = 0; i < bodies.size(); ++i) CHECK(bodies[i].id == i);
  CHECK(bit_identical(bodies, two_clusters(cfg)));

  Vec3 ca, cb;
  for (std::size_t i = 0; i < 1000; ++i) ca += bodies[i].position;
  for (std::size_t i = 1000; i < 2000; ++i) cb += bodies[i].position;
  const Vec3 sep = (cb - ca) / 1000.0;
  CHECK(sep.x > 0.0);
  CHECK(sep.x == doctest::Approx(sep.y).epsilon(1e-1));
  CHECK(sep.x == doctest::Approx(sep.z).epsilon(1e-1));
}

TEST_CASE("standardize closed form on a rotating pair") {
  std::vector<Body> b(2);
  b[0].mass = b[1].mass = 1.0;
  b[0].position = {-1, 0, 0};
  b[1].position = {1, 0, 0};
  b[0].velocity = {0, -1, 0};
  b[1].velocity = {0, 1, 0};
  const auto s = standardize(b);
  // Masses 1/2 each, so E_pot = -1/(4 sep) and E_kin = v^2/2. E_tot = -1/4
  // with E_kin = -E_pot/2 gives sep = 1/2 (positions +-1/4) and v = 1/sqrt(2).
  CHECK(s[0].mass == 0.5);
  CHECK(s[1].position.x == doctest::Approx(0.25));
  CHECK(s[1].velocity.y == doctest::Approx(std::sqrt(0.5)));
  check_standard(s);

  const auto twice = standardize(s);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(norm(twice[i].position - s[i].position) < 1e-12);
    CHECK(norm(twice[i].velocity - s[i].velocity) < 1e-12);
  }
}

TEST_CASE("standardize rejects degenerate input") {
  std::vector<Body> b(1);
  b[0].mass = 1.0;
  CHECK_THROWS_AS(standardize(b), Error);
  std::vector<Body> c(2);
  c[0].mass = c[1].mass = 1.0;
  c[0].velocity = {1, 0, 0};
  CHECK_THROWS_WITH_AS(standardize(c), doctest::Contains("degenerate"), Error);
}
