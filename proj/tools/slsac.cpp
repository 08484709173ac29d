// Command-line front end: run a scenario, synthesize once, or audit a trace.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "slsac/slsac.hpp"

namespace fs = std::filesystem;
using namespace slsac;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAssumption = 3;
constexpr int kExitInconsistent = 4;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config:
    case ErrorKind::DimensionMismatch:
    case ErrorKind::DimensionTooLarge:
    case ErrorKind::UnsupportedNorm:
    case ErrorKind::UnsupportedNormForDim:
    case ErrorKind::UnknownNode:
    case ErrorKind::CorruptTrace:
      return kExitConfig;
    case ErrorKind::AssumptionViolation:
      return kExitAssumption;
    case ErrorKind::Empty:
      return kExitInconsistent;
    default:
      return kExitFailure;
  }
}

struct ScenarioOptions {
  std::string source = "chain5";
  std::string algorithm = "dlar";
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<int> snapshot_period;
  std::string true_alpha;
};

Scenario load_scenario(const ScenarioOptions& o) {
  Scenario s;
  if (o.source == "chain5") {
    s = chain5_scenario();
  } else {
    std::ifstream f(o.source);
    require(static_cast<bool>(f), ErrorKind::Config, "cannot open scenario file " + o.source);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::Config, o.source + ": " + e.what());
    }
    s = scenario_from_json(j);
  }
  if (o.seed) s.seed = *o.seed;
  if (o.steps) s.steps = *o.steps;
  if (o.snapshot_period) s.snapshot_period = *o.snapshot_period;
  if (o.true_alpha == "exact") s.prior = point_prior(s.true_alpha);
  s.validate();
  return s;
}

void add_scenario_options(CLI::App* cmd, ScenarioOptions& o) {
  cmd->add_option("--scenario", o.source, "builtin name (chain5) or path to a JSON scenario")->capture_default_str();
  cmd->add_option("--algorithm", o.algorithm, "central or dlar")
      ->check(CLI::IsMember({"central", "dlar"}))
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "override the scenario seed");
  cmd->add_option("--true-alpha", o.true_alpha, "'exact' replaces the prior by the true parameter")
      ->check(CLI::IsMember({"exact"}));
}

fs::path default_out_dir() {
  if (const char* env = std::getenv("SLSAC_OUT_DIR"); env && *env) return env;
  return "slsac_out";
}

std::string join(const std::vector<double>& v) {
  std::ostringstream os;
  for (std::size_t k = 0; k < v.size(); ++k) os << (k ? " " : "") << v[k];
  return os.str();
}

int cmd_run(const ScenarioOptions& o, const fs::path& out, bool debug_lp) {
  const auto s = load_scenario(o);
  fs::create_directories(out);
  SimulationOptions opt;
  if (debug_lp) {
    opt.lp_dump_dir = (out / "lp").string();
    fs::create_directories(opt.lp_dump_dir);
  }
  const auto trace = run(s, parse_algorithm(o.algorithm), opt);
  write_trace(trace, out);

  // The summary is computed from the files just written.
  const auto stored = read_trace(out);
  const auto sum = summarize(stored);
  nlohmann::json j = {{"scenario", s.name},
                      {"algorithm", o.algorithm},
                      {"seed", s.seed},
                      {"steps", s.steps},
                      {"final_lambda", sum.final_lambda},
                      {"first_stable_step", sum.first_stable_step},
                      {"max_state", sum.max_state},
                      {"max_envelope_ratio", sum.max_envelope_ratio},
                      {"initial_mu", stored.steps.empty() ? 0.0 : stored.steps.front().mu},
                      {"wall_seconds", stored.wall_seconds}};
  std::ofstream(out / "summary.json") << j.dump(2) << "\n";

  std::printf("scenario %s, %s, seed %llu, %d steps\n", s.name.c_str(), o.algorithm.c_str(),
              static_cast<unsigned long long>(s.seed), s.steps);
  std::printf("final lambda: %s\n", join(sum.final_lambda).c_str());
  std::printf("initial mu: %.6g\n", stored.steps.empty() ? 0.0 : stored.steps.front().mu);
  if (sum.first_stable_step >= 0)
    std::printf("first step with mu < 1: %d\n", sum.first_stable_step);
  else
    std::printf("first step with mu < 1: never\n");
  std::printf("max |x|_inf: %.6g\n", sum.max_state);
  std::printf("trace written to %s\n", out.string().c_str());
  return 0;
}

int cmd_synth(const ScenarioOptions& o, const std::string& at) {
  auto s = load_scenario(o);
  if (at == "point") s.prior = point_prior(s.true_alpha);
  const auto verts = enumerate_vertices(s.prior);
  std::printf("scenario %s, %s, %zu vertices, T = %d\n", s.name.c_str(), o.algorithm.c_str(), verts.size(), s.horizon_T);

  SynthesisRequest base;
  base.model = &s.model;
  base.topology = &s.topology;
  base.vertices = verts;
  base.T = s.horizon_T;
  base.norm = s.norm;
  base.rho = s.rho;
  base.lambda_star = s.lambda_star;
  base.cost = s.cost;

  auto report = [](const char* who, const SynthesisResult& r) {
    if (r.status != SynthesisStatus::Feasible) {
      std::printf("%s: infeasible\n", who);
      return false;
    }
    std::printf("%s: lambda %.6g (phase-1 %.6g), phase %s, %d variables, %d constraints, %ld iterations\n", who,
                r.lambda, r.phase1_lambda, to_string(r.phase), r.num_variables, r.num_constraints, r.iterations);
    return true;
  };

  bool ok = true;
  if (o.algorithm == "central") {
    ok = report("central", two_phase_solve(base));
  } else {
    std::vector<Response> cols;
    double worst = 0.0;
    for (int i = 0; i < s.model.n_nodes; ++i) {
      auto req = base;
      req.mode = SynthesisMode::Node;
      req.node = i;
      const auto r = two_phase_solve(req);
      const std::string who = "node " + std::to_string(i);
      ok = report(who.c_str(), r) && ok;
      worst = std::max(worst, r.lambda);
      cols.push_back(r.response);
    }
    if (ok) {
      const auto g = global_at(s.model, s.true_alpha);
      std::printf("max lambda: %.6g\n", worst);
      std::printf("true margin mu: %.6g\n", block_column_margin(s.model, g.A, g.B, cols, s.norm));
    }
  }
  return ok ? 0 : kExitFailure;
}

int cmd_check(const fs::path& dir, bool replay) {
  const auto trace = read_trace(dir);
  auto results = check_trace(trace);
  if (replay) results.push_back(check_replay(trace));
  bool ok = true;
  for (const auto& c : results) {
    std::printf("%-22s %s%s%s\n", c.property.c_str(), c.passed ? "PASS" : "FAIL", c.passed ? "" : "  ",
                c.detail.c_str());
    ok = ok && c.passed;
  }
  return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust adaptive SLS control: simulation, synthesis and trace audit"};
  app.require_subcommand(1);

  ScenarioOptions run_opt;
  std::string out_dir;
  bool debug_lp = false;
  auto* run_cmd = app.add_subcommand("run", "simulate a scenario and write its trace");
  add_scenario_options(run_cmd, run_opt);
  run_cmd->add_option("--steps", run_opt.steps, "override the step count");
  run_cmd->add_option("--snapshot-period", run_opt.snapshot_period, "polytope snapshot period");
  run_cmd->add_flag("--debug-lp", debug_lp, "dump every synthesis LP under <out>/lp");
  run_cmd->add_option("--out", out_dir, "output directory (default $SLSAC_OUT_DIR or ./slsac_out)");

  ScenarioOptions synth_opt;
  std::string at = "prior";
  auto* synth_cmd = app.add_subcommand("synth", "one-shot synthesis report");
  add_scenario_options(synth_cmd, synth_opt);
  synth_cmd->add_option("--at", at, "prior or point")->check(CLI::IsMember({"prior", "point"}))->capture_default_str();

  std::string trace_dir;
  bool replay = false;
  auto* check_cmd = app.add_subcommand("check", "audit a trace directory");
  check_cmd->add_option("trace", trace_dir, "directory holding trace.csv and trace.json")->required();
  check_cmd->add_flag("--replay", replay, "also re-run the scenario on the recorded disturbances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run_cmd) return cmd_run(run_opt, out_dir.empty() ? default_out_dir() : fs::path(out_dir), debug_lp);
    if (*synth_cmd) return cmd_synth(synth_opt, at);
    if (*check_cmd) return cmd_check(trace_dir, replay);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitFailure;
}
