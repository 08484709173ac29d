#pragma once

// Trace files (CSV plus JSON sidecar), the offline audit and replay.
//
// CSV columns, one row per step:
//   t, x_<r>, u_<r>, w_<r>, v_<r>, delta_<r>, lambda_<i>, phase_<i>, mu,
//   row_sum, gamma, x_envelope, delta_size, aggregate_rhs,
//   feasibility_violation, truth_contained, synth_seconds
// Numbers are written with 17 significant digits so a read trace replays
// bit-identically.

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "slsac/errors.hpp"
#include "slsac/model.hpp"
#include "slsac/polytope.hpp"
#include "slsac/simulator.hpp"

namespace slsac {

inline constexpr int kTraceVersion = 1;

/// FNV-1a over the canonical scenario JSON.
inline std::string config_hash(const Scenario& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : to_json(s).dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_num(const std::string& s, int line, const std::string& col) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  require(!s.empty() && end == s.c_str() + s.size(), ErrorKind::CorruptTrace,
          "line " + std::to_string(line) + ", column " + col + ": not a number '" + s + "'");
  return v;
}

inline int trace_width(const Algorithm a, const StructuredModel& model) {
  return a == Algorithm::Central ? 1 : model.n_nodes;
}

}  // namespace detail

inline std::vector<std::string> trace_columns(const SimulationTrace& tr) {
  const auto& model = tr.scenario.model;
  const int n = model.total_state();
  const int m = model.total_input();
  const int w = detail::trace_width(tr.algorithm, model);
  std::vector<std::string> cols{"t"};
  auto group = [&](const char* prefix, int count) {
    for (int r = 0; r < count; ++r) cols.push_back(std::string(prefix) + "_" + std::to_string(r));
  };
  group("x", n);
  group("u", m);
  group("w", n);
  group("v", n);
  group("delta", n);
  group("lambda", w);
  group("phase", w);
  for (const char* c : {"mu", "row_sum", "gamma", "x_envelope", "delta_size", "aggregate_rhs", "feasibility_violation",
                        "truth_contained", "synth_seconds"})
    cols.emplace_back(c);
  return cols;
}

inline void write_trace_csv(const SimulationTrace& tr, std::ostream& os) {
  const auto cols = trace_columns(tr);
  for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c];
  os << '\n';
  for (const auto& r : tr.steps) {
    std::string line = std::to_string(r.t);
    auto put = [&](double v) { line += ',' + detail::num(v); };
    for (const auto* v : {&r.x, &r.u, &r.w, &r.v, &r.delta})
      for (Eigen::Index k = 0; k < v->size(); ++k) put((*v)[k]);
    for (double l : r.lambda) put(l);
    for (int p : r.phase) line += ',' + std::to_string(p);
    for (double v : {r.mu, r.row_sum, r.gamma, r.x_envelope, r.delta_size, r.aggregate_rhs, r.feasibility_violation})
      put(v);
    line += r.truth_contained ? ",1" : ",0";
    put(r.synth_seconds);
    os << line << '\n';
  }
}

inline nlohmann::json trace_metadata(const SimulationTrace& tr) {
  nlohmann::json snaps = nlohmann::json::array();
  for (const auto& s : tr.snapshots) snaps.push_back({{"t", s.t}, {"node", s.node}, {"polytope", to_json(s.polytope)}});
  return {{"trace_version", kTraceVersion},
          {"algorithm", to_string(tr.algorithm)},
          {"seed", tr.scenario.seed},
          {"config_hash", config_hash(tr.scenario)},
          {"scenario", to_json(tr.scenario)},
          {"eta_hat", tr.eta_hat},
          {"drive", tr.drive},
          {"num_steps", tr.steps.size()},
          {"wall_seconds", tr.wall_seconds},
          {"columns", trace_columns(tr)},
          {"snapshots", snaps}};
}

/// Writes <dir>/trace.csv and <dir>/trace.json.
inline void write_trace(const SimulationTrace& tr, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "trace.csv");
  require(static_cast<bool>(csv), ErrorKind::Config, "cannot write " + (dir / "trace.csv").string());
  write_trace_csv(tr, csv);
  std::ofstream js(dir / "trace.json");
  require(static_cast<bool>(js), ErrorKind::Config, "cannot write " + (dir / "trace.json").string());
  js << trace_metadata(tr).dump(1) << '\n';
}

inline SimulationTrace read_trace(std::istream& csv, const nlohmann::json& meta) {
  SimulationTrace tr;
  try {
    require(meta.at("trace_version").get<int>() == kTraceVersion, ErrorKind::CorruptTrace, "unsupported trace_version");
    tr.algorithm = parse_algorithm(meta.at("algorithm").get<std::string>());
    tr.scenario = scenario_from_json(meta.at("scenario"));
    tr.eta_hat = meta.at("eta_hat").get<double>();
    tr.drive = meta.at("drive").get<double>();
    tr.wall_seconds = meta.at("wall_seconds").get<double>();
    for (const auto& s : meta.at("snapshots"))
      tr.snapshots.push_back({s.at("t").get<int>(), s.at("node").get<int>(), polytope_from_json(s.at("polytope"))});
    require(meta.at("config_hash").get<std::string>() == config_hash(tr.scenario), ErrorKind::CorruptTrace,
            "config_hash does not match the embedded scenario");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptTrace, std::string("sidecar: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CorruptTrace) throw;
    fail(ErrorKind::CorruptTrace, std::string("sidecar: ") + e.what());
  }

  const auto cols = trace_columns(tr);
  std::string line;
  require(static_cast<bool>(std::getline(csv, line)), ErrorKind::CorruptTrace, "empty trace CSV");
  require(detail::split_csv(line) == cols, ErrorKind::CorruptTrace, "CSV header does not match the scenario layout");
  const auto& model = tr.scenario.model;
  const int n = model.total_state();
  const int m = model.total_input();
  const int w = detail::trace_width(tr.algorithm, model);
  for (int ln = 2; std::getline(csv, line); ++ln) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    require(cells.size() == cols.size(), ErrorKind::CorruptTrace,
            "line " + std::to_string(ln) + ": expected " + std::to_string(cols.size()) + " fields");
    std::size_t c = 0;
    auto next = [&]() { const auto& s = cells[c]; return detail::parse_num(s, ln, cols[c++]); };
    auto vec = [&](int count) {
      Eigen::VectorXd v(count);
      for (int k = 0; k < count; ++k) v[k] = next();
      return v;
    };
    StepRecord r;
    r.t = static_cast<int>(next());
    r.x = vec(n);
    r.u = vec(m);
    r.w = vec(n);
    r.v = vec(n);
    r.delta = vec(n);
    for (int k = 0; k < w; ++k) r.lambda.push_back(next());
    for (int k = 0; k < w; ++k) r.phase.push_back(static_cast<int>(next()));
    r.mu = next();
    r.row_sum = next();
    r.gamma = next();
    r.x_envelope = next();
    r.delta_size = next();
    r.aggregate_rhs = next();
    r.feasibility_violation = next();
    r.truth_contained = next() != 0.0;
    r.synth_seconds = next();
    require(r.t == static_cast<int>(tr.steps.size()), ErrorKind::CorruptTrace,
            "line " + std::to_string(ln) + ": steps out of order");
    tr.steps.push_back(std::move(r));
  }
  return tr;
}

inline SimulationTrace read_trace(const std::filesystem::path& dir) {
  std::ifstream csv(dir / "trace.csv");
  std::ifstream js(dir / "trace.json");
  require(csv && js, ErrorKind::CorruptTrace, "missing trace.csv or trace.json in " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptTrace, std::string("trace.json: ") + e.what());
  }
  return read_trace(csv, meta);
}

// ---------------------------------------------------------------------------
// Summary

struct TraceSummary {
  std::vector<double> final_lambda;
  int first_stable_step = -1;  // first t with mu_t < 1
  double max_state = 0.0;      // max_t ||x_t||_inf
  double max_envelope_ratio = 0.0;
};

inline TraceSummary summarize(const SimulationTrace& tr) {
  TraceSummary s;
  if (!tr.steps.empty()) s.final_lambda = tr.steps.back().lambda;
  for (const auto& r : tr.steps) {
    if (s.first_stable_step < 0 && r.mu < 1.0) s.first_stable_step = r.t;
    const double xn = r.x.size() ? r.x.cwiseAbs().maxCoeff() : 0.0;
    s.max_state = std::max(s.max_state, xn);
    if (r.x_envelope > 0.0) s.max_envelope_ratio = std::max(s.max_envelope_ratio, vector_norm(tr.scenario.norm, r.x) / r.x_envelope);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Offline audit

struct CheckResult {
  std::string property;
  bool passed = true;
  std::string detail;  // first offending step on failure
};

namespace detail {

inline CheckResult make_check(std::string name) { return CheckResult{std::move(name), true, {}}; }

inline void flag(CheckResult& c, int t, const std::string& what) {
  if (!c.passed) return;
  c.passed = false;
  c.detail = "step " + std::to_string(t) + ": " + what;
}

inline double max_lambda(const std::vector<double>& l) {
  double m = 0.0;
  for (double v : l) m = std::max(m, v);
  return m;
}

}  // namespace detail

/// Re-derives every recorded property from the trace alone.
inline std::vector<CheckResult> check_trace(const SimulationTrace& tr) {
  const auto& s = tr.scenario;
  const auto& model = s.model;
  const bool dlar = tr.algorithm == Algorithm::Dlar;
  const int T = s.horizon_T;
  const auto truth = assemble(model, s.true_alpha);
  const auto g = global_matrices(model, truth);
  std::vector<CheckResult> out;

  auto length = detail::make_check("trace_length");
  if (static_cast<int>(tr.steps.size()) != s.steps + 1)
    detail::flag(length, static_cast<int>(tr.steps.size()), "expected " + std::to_string(s.steps + 1) + " rows");
  out.push_back(length);

  auto plant = detail::make_check("plant_recursion");
  for (std::size_t t = 0; t + 1 < tr.steps.size(); ++t) {
    const auto& r = tr.steps[t];
    const Eigen::VectorXd next = step_plant(model, truth, r.x, r.u, r.w);
    const double err = (next - tr.steps[t + 1].x).cwiseAbs().maxCoeff();
    if (err > 1e-12 * (1.0 + next.cwiseAbs().maxCoeff())) {
      detail::flag(plant, static_cast<int>(t + 1), "x differs from the recursion by " + detail::num(err));
      break;
    }
  }
  if (!tr.steps.empty() && (tr.steps[0].x - s.x0).cwiseAbs().maxCoeff() > 0.0) detail::flag(plant, 0, "x_0 differs from the scenario");
  out.push_back(plant);

  auto dist = detail::make_check("disturbance_bounds");
  for (const auto& r : tr.steps)
    for (int j = 0; j < model.n_nodes; ++j) {
      const double wn = vector_norm(s.norm, r.w.segment(model.state_offset(j), model.nx(j)));
      const double vn = vector_norm(s.norm, r.v.segment(model.state_offset(j), model.nx(j)));
      if (wn > s.eta * (1.0 + 1e-12) + 1e-15 || vn > s.noise_bound * (1.0 + 1e-12) + 1e-15)
        detail::flag(dist, r.t, "node " + std::to_string(j) + " exceeds its bound");
    }
  out.push_back(dist);

  auto truth_in = detail::make_check("truth_containment");
  for (const auto& r : tr.steps)
    if (!r.truth_contained) detail::flag(truth_in, r.t, "true parameter outside an estimate");
  for (const auto& sn : tr.snapshots)
    if (!sn.polytope.contains(s.true_alpha, 1e-9)) detail::flag(truth_in, sn.t, "snapshot excludes the true parameter");
  out.push_back(truth_in);

  auto nest = detail::make_check("polytope_nesting");
  {
    std::map<int, const Snapshot*> last;
    for (const auto& sn : tr.snapshots) {
      auto it = last.find(sn.node);
      if (it != last.end()) {
        const auto& earlier = it->second->polytope;
        for (const auto& v : enumerate_vertices(sn.polytope))
          if (!earlier.contains(v, 1e-7)) {
            detail::flag(nest, sn.t, "node " + std::to_string(sn.node) + " estimate grew");
            break;
          }
      }
      last[sn.node] = &sn;
    }
  }
  out.push_back(nest);

  auto mono = detail::make_check("margin_monotonicity");
  for (std::size_t t = 1; t < tr.steps.size(); ++t)
    for (std::size_t i = 0; i < tr.steps[t].lambda.size(); ++i)
      if (tr.steps[t].lambda[i] > std::max(tr.steps[t - 1].lambda[i], s.lambda_star) + 1e-6)
        detail::flag(mono, static_cast<int>(t), "lambda " + std::to_string(i) + " rose above max(previous, lambda*)");
  out.push_back(mono);

  auto feas = detail::make_check("recursive_feasibility");
  for (const auto& r : tr.steps)
    if (r.feasibility_violation > 1e-7) detail::flag(feas, r.t, "previous solution violates by " + detail::num(r.feasibility_violation));
  out.push_back(feas);

  // One-step bound on the delta size and the envelope, recomputed from the
  // recorded deltas, margins and disturbances.
  auto agg = detail::make_check("aggregate_bound");
  auto env = detail::make_check("state_envelope");
  const double drive = tr.drive + (dlar ? model.n_nodes : 1) * tr.eta_hat;
  std::vector<double> z, gamma;
  for (std::size_t t = 0; t < tr.steps.size(); ++t) {
    const auto& r = tr.steps[t];
    z.push_back(dlar ? detail::node_norm_sum(model, s.norm, r.delta) : vector_norm(s.norm, r.delta));
    if (t == 0) {
      gamma.push_back(z[0]);
    } else {
      const auto& p = tr.steps[t - 1];
      const double lam = detail::max_lambda(p.lambda);
      double zmax = 0.0, gmax = 0.0;
      for (int k = 1; k <= T && static_cast<int>(t) - k >= 0; ++k) {
        zmax = std::max(zmax, z[t - static_cast<std::size_t>(k)]);
        gmax = std::max(gmax, gamma[t - static_cast<std::size_t>(k)]);
      }
      const double rhs = lam * zmax + tr.drive + detail::what_norm_sum(model, g, s.norm, p.w, r.v, p.v, dlar);
      if (z[t] > rhs + 1e-9 * (1.0 + rhs)) detail::flag(agg, r.t, detail::num(z[t]) + " > " + detail::num(rhs));
      gamma.push_back(lam * gmax + drive);
    }
    if (z[t] > gamma[t] * (1.0 + 1e-9) + 1e-12) detail::flag(env, r.t, "delta size above its envelope");
    double gw = gamma[t];
    for (int k = 1; k <= T - 1 && static_cast<int>(t) - k >= 0; ++k) gw = std::max(gw, gamma[t - static_cast<std::size_t>(k)]);
    const double bound = r.row_sum * gw + s.noise_bound;
    const double xn = vector_norm(s.norm, r.x);
    if (xn > bound * (1.0 + 1e-9) + 1e-12) detail::flag(env, r.t, "||x|| = " + detail::num(xn) + " > " + detail::num(bound));
  }
  out.push_back(agg);
  out.push_back(env);
  return out;
}

/// Re-runs the scenario on the recorded disturbances; x and u must match bit for bit.
inline CheckResult check_replay(const SimulationTrace& tr) {
  std::vector<Eigen::VectorXd> w, v;
  for (const auto& r : tr.steps) {
    w.push_back(r.w);
    v.push_back(r.v);
  }
  auto s = tr.scenario;
  s.steps = static_cast<int>(tr.steps.size()) - 1;
  SimulationOptions opt;
  opt.w_override = &w;
  opt.v_override = &v;
  const auto again = run(s, tr.algorithm, opt);
  auto c = detail::make_check("replay");
  for (std::size_t t = 0; t < tr.steps.size(); ++t)
    if (again.steps[t].x != tr.steps[t].x || again.steps[t].u != tr.steps[t].u) {
      detail::flag(c, static_cast<int>(t), "replayed x/u differ");
      break;
    }
  return c;
}

}  // namespace slsac
