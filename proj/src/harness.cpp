#include "nbody/harness.hpp"

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "nbody/error.hpp"

namespace nbody {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* backend_name(Backend b) { return b == Backend::socket ? "socket" : "inproc"; }

}  // namespace

std::filesystem::path snapshot_path(const std::filesystem::path& dir, std::size_t step) {
  char name[40];
  std::snprintf(name, sizeof name, "snapshot_%06zu.csv", step);
  return dir / name;
}

RunOutcome run_configured(const RunOptions& opts) {
  const SimConfig& cfg = opts.sim;
  cfg.validate();
  if (opts.snapshot_every > 0 && opts.out.empty()) throw Error("snapshots need an output directory");
  if (!opts.out.empty()) std::filesystem::create_directories(opts.out);

  RunOutcome outcome;
  std::vector<Body> initial = initial_bodies(cfg);
  outcome.audit.push_back({0, total_energy(initial, cfg.eps)});

  std::size_t every = 0;
  if (opts.snapshot_every > 0 && opts.audit_every > 0)
    every = std::gcd(opts.snapshot_every, opts.audit_every);
  else
    every = std::max(opts.snapshot_every, opts.audit_every);

  Observer observer;
  if (every > 0) {
    observer = [&](std::size_t step, double t, std::span<const Body> bodies) {
      if (opts.snapshot_every > 0 && step % opts.snapshot_every == 0) {
        const auto path = snapshot_path(opts.out, step);
        emit_snapshot(bodies, t, path);
        outcome.snapshots.push_back(path);
      }
      if (opts.audit_every > 0 && step > 0 && step < cfg.steps && step % opts.audit_every == 0)
        outcome.audit.push_back({step, total_energy(bodies, cfg.eps)});
    };
  }
  outcome.sim = run_simulation(cfg, std::move(initial), observer, every);
  if (cfg.steps > 0) outcome.audit.push_back({cfg.steps, total_energy(outcome.sim.bodies, cfg.eps)});
  const double e0 = outcome.audit.front().energy.total;
  const double e1 = outcome.audit.back().energy.total;
  outcome.drift_percent = 100.0 * (e1 - e0) / std::abs(e0);

  if (!opts.out.empty()) {
    std::ofstream(opts.out / "report.csv") << format_report(opts, outcome);
    std::ofstream(opts.out / "trace.csv") << format_trace(outcome);
  }
  return outcome;
}

std::string format_report(const RunOptions& opts, const RunOutcome& outcome) {
  const SimConfig& c = opts.sim;
  std::ostringstream s;
  const auto row = [&](const std::string& k, const std::string& v) { s << k << ',' << v << '\n'; };
  s << "key,value\n";
  row("algorithm", std::to_string(c.algorithm));
  row("n", std::to_string(c.n));
  row("ranks", std::to_string(c.ranks));
  row("theta", fmt(c.theta));
  row("dt", fmt(c.dt));
  row("steps", std::to_string(c.steps));
  row("eps", fmt(c.eps.eps));
  row("seed", std::to_string(c.seed.value));
  row("transport", backend_name(c.backend));
  row("schedule_seed", c.schedule_seed ? std::to_string(*c.schedule_seed) : "0");
  for (const auto& a : outcome.audit) {
    const std::string p = "energy_step" + std::to_string(a.step);
    row(p + "_kinetic", fmt(a.energy.kinetic));
    row(p + "_potential", fmt(a.energy.potential));
    row(p + "_total", fmt(a.energy.total));
  }
  row("e0", fmt(outcome.audit.front().energy.total));
  row("e_final", fmt(outcome.audit.back().energy.total));
  row("drift_percent", fmt(outcome.drift_percent));

  const auto& ranks = outcome.sim.ranks;
  std::uint64_t work = 0, merge_visited = 0, requests = 0, defers = 0, sort_rounds = 0;
  for (const auto& r : ranks) {
    work += r.work;
    merge_visited += r.merge_visited;
    requests += r.remote_requests;
    defers += r.defers;
    sort_rounds = std::max(sort_rounds, r.sort_rounds);
  }
  row("work", std::to_string(work));
  row("merge_visited", std::to_string(merge_visited));
  row("remote_requests", std::to_string(requests));
  row("defers", std::to_string(defers));
  row("sort_rounds", std::to_string(sort_rounds));

  for (std::size_t p = 0; p < kPhaseCount; ++p) {
    std::uint64_t msgs = 0, bytes = 0;
    for (const auto& r : ranks) {
      msgs += r.transport.messages[p];
      bytes += r.transport.bytes[p];
    }
    const std::string name = phase_name(static_cast<Phase>(p));
    row("messages_" + name, std::to_string(msgs));
    row("bytes_" + name, std::to_string(bytes));
  }
  for (std::size_t p = 0; p < kPhaseCount; ++p) {
    const std::string name = phase_name(static_cast<Phase>(p));
    double span = 0.0;
    for (std::size_t r = 0; r < ranks.size(); ++r) {
      const double t = ranks[r].seconds[p];
      span = std::max(span, t);
      row("time_" + name + "_rank" + std::to_string(r), fmt(t));
    }
    row("time_" + name, fmt(span));
  }
  row("wall_seconds", fmt(outcome.sim.wall_seconds));
  return s.str();
}

std::string format_trace(const RunOutcome& outcome) {
  std::ostringstream s;
  s << "src,dst,messages,bytes,hash\n";
  for (std::size_t r = 0; r < outcome.sim.ranks.size(); ++r)
    for (const auto& [dst, d] : outcome.sim.ranks[r].transport.by_destination)
      s << r << ',' << dst << ',' << d.messages << ',' << d.bytes << ',' << d.hash << '\n';
  return s.str();
}

void emit_snapshot(std::span<const Body> bodies, double t, const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error("cannot write snapshot " + path.string());
  std::fprintf(f, "# t=%.17g n=%zu\n", t, bodies.size());
  for (const auto& b : bodies)
    std::fprintf(f, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", b.mass, b.position.x, b.position.y, b.position.z,
                 b.velocity.x, b.velocity.y, b.velocity.z);
  const bool ok = std::ferror(f) == 0;
  if (std::fclose(f) != 0 || !ok) throw Error("failed writing snapshot " + path.string());
}

Snapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read snapshot " + path.string());
  std::string line;
  std::getline(in, line);
  Snapshot snap;
  std::size_t n = 0;
  if (std::sscanf(line.c_str(), "# t=%lf n=%zu", &snap.t, &n) != 2) throw Error("snapshot: bad header in " + path.string());
  snap.bodies.reserve(n);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Body b;
    b.id = snap.bodies.size();
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf", &b.mass, &b.position.x, &b.position.y, &b.position.z,
                    &b.velocity.x, &b.velocity.y, &b.velocity.z) != 7)
      throw Error("snapshot: bad row " + std::to_string(snap.bodies.size() + 1) + " in " + path.string());
    snap.bodies.push_back(b);
  }
  if (snap.bodies.size() != n) throw Error("snapshot: row count does not match header in " + path.string());
  return snap;
}

std::vector<ScalingRow> scaling_study(const ScalingGrid& grid) {
  std::vector<ScalingRow> rows;
  for (int alg : grid.algorithms)
    for (std::size_t n : grid.sizes) {
      std::map<int, ScalingRow> done;
      const auto measure = [&](int ranks) {
        if (auto it = done.find(ranks); it != done.end()) return it->second;
        ScalingRow row;
        row.algorithm = alg;
        row.n = n;
        row.ranks = ranks;
        try {
          SimConfig cfg = grid.base;
          cfg.algorithm = alg;
          cfg.n = n;
          cfg.ranks = ranks;
          row.wall_time = run_simulation(cfg, initial_bodies(cfg)).wall_seconds;
          row.parallel_cost = static_cast<double>(ranks) * row.wall_time / static_cast<double>(n);
        } catch (const std::exception& e) {
          row.status = std::string("failed: ") + e.what();
          row.wall_time = 0.0;
        }
        done[ranks] = row;
        return row;
      };
      const ScalingRow base = measure(1);
      for (int ranks : grid.ranks) {
        ScalingRow row = measure(ranks);
        if (row.status == "ok" && base.status == "ok" && row.wall_time > 0.0)
          row.speedup_vs_ranks1 = ranks == 1 ? 1.0 : base.wall_time / row.wall_time;
        rows.push_back(row);
      }
    }
  return rows;
}

std::string format_scaling(const std::vector<ScalingRow>& rows) {
  std::ostringstream s;
  s << "algorithm,n,ranks,wall_time,speedup_vs_ranks1,parallel_cost,status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    for (auto& ch : status)
      if (ch == ',' || ch == '\n') ch = ';';
    s << r.algorithm << ',' << r.n << ',' << r.ranks << ',' << fmt(r.wall_time) << ',' << fmt(r.speedup_vs_ranks1) << ','
      << fmt(r.parallel_cost) << ',' << status << '\n';
  }
  return s.str();
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parallel Barnes-Hut N-body simulator"};
  app.set_help_flag("-h,--help");

  RunOptions opts;
  SimConfig& c = opts.sim;
  std::string transport = "inproc";
  std::uint64_t schedule_seed = 0;
  std::string out_dir;
  app.add_option("--algorithm", c.algorithm, "Driver 0..7")->check(CLI::Range(0, kAlgorithmCount - 1));
  app.add_option("--n", c.n, "Number of bodies (even)");
  app.add_option("--ranks", c.ranks, "Number of ranks")->check(CLI::PositiveNumber);
  app.add_option("--theta", c.theta, "Opening angle")->check(CLI::NonNegativeNumber);
  app.add_option("--dt", c.dt, "Time step")->check(CLI::PositiveNumber);
  app.add_option("--steps", c.steps, "Number of steps");
  app.add_option("--eps", c.eps.eps, "Softening length")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", c.seed.value, "Initial-condition seed");
  app.add_option("--transport", transport, "inproc or socket")->check(CLI::IsMember({"inproc", "socket"}));
  app.add_option("--snapshot-every", opts.snapshot_every, "Snapshot interval in steps (needs --out)");
  app.add_option("--audit-every", opts.audit_every, "Energy audit interval in steps");
  app.add_option("--out", out_dir, "Output directory");
  auto* sched = app.add_option("--schedule-seed", schedule_seed, "Run ranks one at a time in a seeded order");
  app.add_option("--exchange-width", c.exchange_width, "Boundary exchange width of the parallel sort")
      ->check(CLI::PositiveNumber);

  auto* scaling = app.add_subcommand("scaling", "Run a grid of configurations and print the scaling table");
  ScalingGrid grid;
  grid.algorithms = {7};
  grid.sizes = {4000};
  grid.ranks = {1, 2, 4};
  std::string table;
  std::size_t scaling_steps = 10;
  scaling->add_option("--algorithms", grid.algorithms, "Drivers")->delimiter(',');
  scaling->add_option("--sizes", grid.sizes, "Body counts")->delimiter(',');
  scaling->add_option("--rank-counts", grid.ranks, "Rank counts")->delimiter(',');
  scaling->add_option("--steps", scaling_steps, "Steps per run");
  scaling->add_option("--table", table, "Write the table here as well");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return 2;
  }

  c.backend = transport == "socket" ? Backend::socket : Backend::inproc;
  if (sched->count() > 0) c.schedule_seed = schedule_seed;
  opts.out = out_dir;

  const auto usage = [&](const std::string& msg) {
    err << "usage error: " << msg << '\n';
    return 2;
  };
  if (c.backend == Backend::socket && c.schedule_seed) return usage("--schedule-seed requires --transport inproc");
  if (opts.snapshot_every > 0 && out_dir.empty()) return usage("--snapshot-every requires --out");
  if (c.n % 2 != 0) return usage("--n must be even (two equal clusters)");
  try {
    c.validate();
  } catch (const Error& e) {
    return usage(e.what());
  }

  try {
    if (*scaling) {
      grid.base = c;
      grid.base.steps = scaling_steps;
      for (int r : grid.ranks)
        if (r < 1) return usage("rank counts must be positive");
      const std::string text = format_scaling(scaling_study(grid));
      out << text;
      if (!table.empty()) std::ofstream(table) << text;
      return 0;
    }
    const RunOutcome outcome = run_configured(opts);
    out << format_report(opts, outcome);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace nbody
