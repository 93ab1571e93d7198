#pragma once

// Command-line front end: configured runs with an energy audit, snapshots,
// message traces, and the scaling table.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "nbody/simulation.hpp"

namespace nbody {

struct RunOptions {
  SimConfig sim;
  std::size_t snapshot_every = 0;
  std::size_t audit_every = 0;
  std::filesystem::path out;  // empty: report to stdout only
};

struct AuditPoint {
  std::size_t step = 0;
  EnergyReport energy;
};

struct RunOutcome {
  SimResult sim;
  std::vector<AuditPoint> audit;  // always holds the first and last step
  double drift_percent = 0.0;
  std::vector<std::filesystem::path> snapshots;
};

/// Runs the configured simulation. Energies come from the direct pairwise sum.
RunOutcome run_configured(const RunOptions& opts);

/// "key,value" lines under a one-line schema header. Keys starting with
/// "time_" or "wall_" carry timings; everything else is deterministic.
std::string format_report(const RunOptions& opts, const RunOutcome& outcome);

/// "src,dst,messages,bytes,hash" per communicating pair.
std::string format_trace(const RunOutcome& outcome);

/// Header "# t=<time> n=<N>", then "mass,x,y,z,vx,vy,vz" per body with 17
/// significant digits.
void emit_snapshot(std::span<const Body> bodies, double t, const std::filesystem::path& path);

struct Snapshot {
  double t = 0.0;
  std::vector<Body> bodies;  // ids follow row order
};

Snapshot load_snapshot(const std::filesystem::path& path);

std::filesystem::path snapshot_path(const std::filesystem::path& dir, std::size_t step);

struct ScalingGrid {
  std::vector<int> algorithms;
  std::vector<std::size_t> sizes;
  std::vector<int> ranks;
  SimConfig base;
};

struct ScalingRow {
  int algorithm = 0;
  std::size_t n = 0;
  int ranks = 1;
  double wall_time = 0.0;
  double speedup_vs_ranks1 = 0.0;
  double parallel_cost = 0.0;
  std::string status = "ok";
};

/// Every combination of the grid. Speedup is relative to the one-rank run of
/// the same algorithm and size, which is performed even if not requested.
/// Failed runs are recorded with their message and zero metrics.
std::vector<ScalingRow> scaling_study(const ScalingGrid& grid);
std::string format_scaling(const std::vector<ScalingRow>& rows);

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nbody
