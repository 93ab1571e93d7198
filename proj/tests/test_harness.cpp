#include <cmath>
#include <filesystem>
#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "nbody/error.hpp"
#include "nbody/harness.hpp"

using namespace nbody;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "nbody");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nbody_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::map<std::string, std::string> parse_report(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "key,value");
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    REQUIRE(comma != std::string::npos);
    kv[line.substr(0, comma)] = line.substr(comma + 1);
  }
  return kv;
}

std::string without_timings(const std::string& report) {
  std::istringstream in(report);
  std::string line, kept;
  while (std::getline(in, line))
    if (line.rfind("time_", 0) != 0 && line.rfind("wall_", 0) != 0) kept += line + "\n";
  return kept;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("snapshots round trip bit-exactly") {
  const fs::path dir = scratch("snap");
  fs::create_directories(dir);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10, 10);
  std::vector<Body> bodies(50);
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    bodies[i].id = i;
    bodies[i].mass = std::abs(u(rng)) * 1e-7;
    bodies[i].position = {u(rng), u(rng) * 1e-200, -0.0};
    bodies[i].velocity = {u(rng) / 3, 1.0 / 7.0, 5e-324};
  }
  const fs::path p = dir / "a.csv";
  emit_snapshot(bodies, 0.1 * 3, p);
  const Snapshot back = load_snapshot(p);
  CHECK(back.t == 0.1 * 3);
  REQUIRE(back.bodies.size() == bodies.size());
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    CHECK(back.bodies[i].mass == bodies[i].mass);
    CHECK(back.bodies[i].position == bodies[i].position);
    CHECK(back.bodies[i].velocity == bodies[i].velocity);
  }
  CHECK(slurp(p).rfind("# t=0.30000000000000004 n=50\n", 0) == 0);

  const fs::path one = dir / "one.csv";
  emit_snapshot(std::vector<Body>(bodies.begin(), bodies.begin() + 1), 0.0, one);
  CHECK(load_snapshot(one).bodies.size() == 1);

  std::ofstream(dir / "bad_header.csv") << "t=1\n";
  CHECK_THROWS_AS(load_snapshot(dir / "bad_header.csv"), Error);
  std::ofstream(dir / "bad_row.csv") << "# t=0 n=1\n1,2,3\n";
  CHECK_THROWS_AS(load_snapshot(dir / "bad_row.csv"), Error);
  std::ofstream(dir / "short.csv") << "# t=0 n=2\n1,2,3,4,5,6,7\n";
  CHECK_THROWS_AS(load_snapshot(dir / "short.csv"), Error);
  CHECK_THROWS_AS(load_snapshot(dir / "missing.csv"), Error);
  CHECK_THROWS_AS(emit_snapshot(bodies, 0.0, dir / "no_such_dir" / "x.csv"), Error);
}

TEST_CASE("tiny direct run reports negligible drift") {
  const CliRun r = cli({"--algorithm", "0", "--n", "64", "--ranks", "1", "--steps", "1"});
  REQUIRE(r.code == 0);
  const auto kv = parse_report(r.out);
  CHECK(kv.at("algorithm") == "0");
  CHECK(kv.at("eps") == "0.050000000000000003");
  CHECK(std::abs(std::stod(kv.at("drift_percent"))) < 1e-2);
  CHECK(kv.count("time_force") == 1);
  CHECK(kv.count("messages_share") == 1);
}

TEST_CASE("identical invocations give identical reports") {
  const std::vector<std::string> args{"--algorithm", "7", "--n", "128", "--ranks", "3", "--steps", "5", "--seed", "4"};
  const CliRun a = cli(args);
  const CliRun b = cli(args);
  REQUIRE(a.code == 0);
  CHECK(without_timings(a.out) == without_timings(b.out));
}

TEST_CASE("report columns do not depend on the algorithm") {
  std::vector<std::string> keys0;
  for (int alg = 0; alg < kAlgorithmCount; ++alg) {
    const CliRun r = cli({"--algorithm", std::to_string(alg), "--n", "64", "--ranks", "2", "--steps", "2"});
    REQUIRE(r.code == 0);
    std::vector<std::string> keys;
    for (const auto& [k, v] : parse_report(r.out)) keys.push_back(k);
    if (alg == 0) keys0 = keys;
    CHECK(keys == keys0);
  }
}

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({"--algorithm", "9"}).code == 2);
  CHECK(cli({"--bogus"}).code == 2);
  CHECK(cli({"--n", "64", "--steps", "1", "--snapshot-every", "1"}).code == 2);
  CHECK(cli({"--transport", "socket", "--schedule-seed", "3"}).code == 2);
  CHECK(cli({"--transport", "carrier-pigeon"}).code == 2);
  CHECK(cli({"--n", "63"}).code == 2);
  CHECK(cli({"--n", "4", "--ranks", "8"}).code == 2);
  CHECK(cli({"--dt", "0"}).code == 2);
  const CliRun help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("--algorithm") != std::string::npos);
}

TEST_CASE("runtime failures exit with 1") {
  // Two bodies per rank leave no room for the sort exchange.
  const CliRun r = cli({"--algorithm", "5", "--n", "4", "--ranks", "4", "--steps", "1"});
  CHECK(r.code == 1);
  CHECK(r.err.find("partition too small") != std::string::npos);
}

TEST_CASE("snapshots, audits and traces in the output directory") {
  const fs::path dir = scratch("run");
  const CliRun r = cli({"--algorithm", "6", "--n", "64", "--ranks", "2", "--steps", "50", "--snapshot-every", "10",
                        "--audit-every", "25", "--out", dir.string()});
  REQUIRE(r.code == 0);
  std::size_t snaps = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind("snapshot_", 0) == 0) ++snaps;
  CHECK(snaps == 6);
  CHECK(fs::exists(snapshot_path(dir, 50)));
  const auto kv = parse_report(slurp(dir / "report.csv"));
  CHECK(kv.count("energy_step0_total") == 1);
  CHECK(kv.count("energy_step25_total") == 1);
  CHECK(kv.count("energy_step50_total") == 1);
  const Snapshot last = load_snapshot(snapshot_path(dir, 50));
  CHECK(last.t == doctest::Approx(0.5));
  CHECK(last.bodies.size() == 64);
  CHECK(slurp(dir / "trace.csv").rfind("src,dst,messages,bytes,hash\n", 0) == 0);
}

TEST_CASE("seeded runs write identical snapshots and traces") {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  for (const auto& dir : {a, b}) {
    const CliRun r = cli({"--algorithm", "7", "--n", "96", "--ranks", "3", "--steps", "4", "--snapshot-every", "2",
                          "--schedule-seed", "9", "--out", dir.string()});
    REQUIRE(r.code == 0);
  }
  for (std::size_t step : {0, 2, 4}) CHECK(slurp(snapshot_path(a, step)) == slurp(snapshot_path(b, step)));
  CHECK(slurp(a / "trace.csv") == slurp(b / "trace.csv"));
}

TEST_CASE("scaling study") {
  ScalingGrid grid;
  grid.algorithms = {5};
  grid.sizes = {128};
  grid.ranks = {1};
  grid.base.steps = 1;
  auto rows = scaling_study(grid);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].speedup_vs_ranks1 == 1.0);
  CHECK(rows[0].status == "ok");
  CHECK(rows[0].parallel_cost == doctest::Approx(rows[0].wall_time / 128));

  grid.sizes = {4};
  grid.ranks = {4};
  rows = scaling_study(grid);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].status.rfind("failed", 0) == 0);
  CHECK(rows[0].wall_time == 0.0);

  const std::string table = format_scaling(rows);
  CHECK(table.rfind("algorithm,n,ranks,wall_time,speedup_vs_ranks1,parallel_cost,status\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 2);

  const CliRun r = cli({"scaling", "--algorithms", "1,2", "--sizes", "64", "--rank-counts", "1,2", "--steps", "1"});
  CHECK(r.code == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 5);
}
