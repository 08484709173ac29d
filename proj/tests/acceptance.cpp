// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "lp_oracle.hpp"
#include "scenarios.hpp"
#include "slsac/slsac.hpp"

using namespace slsac;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;
};

int failures = 0;

void report(int id, const char* title, const Outcome& o, double seconds) {
  std::printf("criterion %2d %s  %s: %s (%.1fs)\n", id, o.passed ? "PASS" : "FAIL", title, o.detail.c_str(), seconds);
  std::fflush(stdout);
  if (!o.passed) ++failures;
}

template <class F>
void criterion(int id, const char* title, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, title, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome open_loop_instability() {
  const auto s = chain5_scenario();
  Eigen::VectorXd a = s.true_alpha;
  a.head(3) << 0.3, 0.6, 0.2;
  const double r = spectral_radius(global_at(s.model, a).A);
  return {std::abs(r - 1.05) <= 0.005, fmt("spectral radius %.6f, required 1.05 +- 0.005", r)};
}

struct SeededRuns {
  std::vector<SimulationTrace> traces;
};

SeededRuns run_seeds() {
  SeededRuns out;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto s = chain5_scenario();
    s.seed = seed;
    s.steps = 200;
    s.snapshot_period = 1;
    out.traces.push_back(run_algorithm2(s));
  }
  return out;
}

Outcome ground_truth(const SeededRuns& runs) {
  double worst = -lp::kInf;
  std::size_t checked = 0;
  for (const auto& tr : runs.traces) {
    const auto& alpha = tr.scenario.true_alpha;
    for (const auto& sn : tr.snapshots) {
      const auto& p = sn.polytope;
      if (p.num_rows() > 0) worst = std::max(worst, (p.normals() * alpha - p.offsets()).maxCoeff());
      ++checked;
    }
  }
  const std::size_t expected = runs.traces.size() * 201 * 5;
  const bool ok = checked == expected && worst <= 1e-9;
  return {ok, std::to_string(checked) + " node estimates, max row violation " + fmt("%.3g", worst)};
}

Outcome margin_monotonicity(const SeededRuns& runs) {
  double worst = -lp::kInf;
  for (const auto& tr : runs.traces) {
    const double ls = tr.scenario.lambda_star;
    for (std::size_t t = 1; t < tr.steps.size(); ++t)
      for (std::size_t i = 0; i < tr.steps[t].lambda.size(); ++i)
        worst = std::max(worst, tr.steps[t].lambda[i] - std::max(tr.steps[t - 1].lambda[i], ls));
  }
  return {worst <= 1e-6, fmt("max of lambda_t - max(lambda_{t-1}, lambda*) = %.3g", worst)};
}

Outcome recursive_feasibility(const SeededRuns& runs) {
  double worst = 0.0;
  for (const auto& tr : runs.traces)
    for (const auto& r : tr.steps) worst = std::max(worst, r.feasibility_violation);
  return {worst <= 1e-7, fmt("max violation of the previous solution %.3g", worst)};
}

Outcome learning_to_stability(const SeededRuns& runs) {
  bool ok = true;
  std::string firsts;
  double ratio = 0.0;
  for (const auto& tr : runs.traces) {
    const auto sum = summarize(tr);
    firsts += (firsts.empty() ? "" : ",") + std::to_string(sum.first_stable_step);
    ok = ok && sum.first_stable_step >= 0 && sum.first_stable_step <= 50;
    for (const auto& c : check_trace(tr))
      if (c.property == "state_envelope" && !c.passed) ok = false;
    ratio = std::max(ratio, sum.max_envelope_ratio);
  }
  return {ok, "first t with mu < 1 per seed: " + firsts + "; max ||x||/envelope " + fmt("%.3g", ratio)};
}

Outcome perfect_knowledge() {
  // Chain delays: the deployed controller of a short DLAR run.
  auto s = chain5_scenario();
  s.prior = point_prior(s.true_alpha);
  s.steps = 20;
  const auto tr = run_algorithm2(s);
  bool ok = true;
  double mu_lo = lp::kInf, mu_hi = 0.0;
  for (const auto& r : tr.steps) {
    mu_lo = std::min(mu_lo, r.mu);
    mu_hi = std::max(mu_hi, r.mu);
    for (double l : r.lambda) ok = ok && l <= s.lambda_star + 1e-9;
  }
  ok = ok && mu_lo > 0.0 && mu_hi < 1.0 && std::isfinite(mu_hi);

  // No delays, T = 6: the margin-optimal node responses are exact deadbeat.
  auto z = chain5_scenario();
  z.topology = Topology::full(5);
  z.horizon_T = 6;
  std::vector<Response> cols;
  for (int i = 0; i < 5; ++i) {
    SynthesisRequest req;
    req.mode = SynthesisMode::Node;
    req.node = i;
    req.model = &z.model;
    req.topology = &z.topology;
    req.vertices = {z.true_alpha};
    req.T = z.horizon_T;
    req.rho = z.rho;
    req.cost = z.cost;
    const auto built = build_program(req, SynthesisObjective::Lambda);
    const auto sol = lp::solve(built.lp);
    if (sol.status != lp::LpStatus::Optimal) return {false, "node LP without delays not optimal"};
    cols.push_back(built.vars.extract(sol.point));
  }
  const auto g = global_at(z.model, z.true_alpha);
  const double mu0 = block_column_margin(z.model, g.A, g.B, cols, z.norm);
  ok = ok && mu0 <= 1e-6;
  return {ok, "with delays mu in [" + fmt("%.4f", mu_lo) + ", " + fmt("%.4f", mu_hi) + "] and lambda <= lambda* from t = 0; "
                  "without delays (T = 6) mu = " + fmt("%.3g", mu0)};
}

Outcome growth_bound_oracle() {
  std::mt19937_64 rng(20260);
  std::uniform_real_distribution<double> lam(0.1, 2.0), unit(0.0, 1.0);
  std::uniform_int_distribution<int> horizon(1, 8);
  double worst = -lp::kInf;
  for (int trial = 0; trial < 1000; ++trial) {
    const double l = lam(rng);
    const int T = horizon(rng);
    const double eta = 0.01 + 2.0 * unit(rng);
    std::vector<double> z{0.01 + 3.0 * unit(rng)};
    const bool tight = trial % 4 == 0;
    for (int t = 1; t <= 60; ++t) {
      double m = 0.0;
      for (int k = 1; k <= T && t - k >= 0; ++k) m = std::max(m, z[static_cast<std::size_t>(t - k)]);
      z.push_back((tight ? 1.0 : unit(rng)) * (l * m + eta));
      const double g = lemma1_bound(l, T, z[0], eta, t);
      worst = std::max(worst, (z.back() - g) / (1.0 + g));
    }
  }
  return {worst <= 1e-12, fmt("max relative excess over the bound %.3g", worst)};
}

Outcome vertex_sufficiency() {
  std::mt19937_64 rng(808);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> dim(1, 4), horizon(2, 4), cuts(0, 4);
  double worst = -lp::kInf;
  for (int trial = 0; trial < 100; ++trial) {
    const int p = dim(rng);
    const int n = 2, m = 1;
    StructuredModel model;
    model.n_nodes = 1;
    model.p = p;
    model.state_dims = {n};
    model.input_dims = {m};
    std::vector<Eigen::MatrixXd> ba, bb;
    for (int k = 0; k < p; ++k) {
      ba.push_back(0.5 * Eigen::MatrixXd::NullaryExpr(n, n, [&] { return g(rng); }));
      bb.push_back(0.5 * Eigen::MatrixXd::NullaryExpr(n, m, [&] { return g(rng); }));
    }
    model.basis_A[{0, 0}] = ba;
    model.basis_B = {bb};

    // Random box cut by random halfspaces through its interior.
    Eigen::VectorXd lo(p), hi(p);
    for (int k = 0; k < p; ++k) {
      lo[k] = -1.0 + unit(rng);
      hi[k] = lo[k] + 0.2 + unit(rng);
    }
    auto poly = HalfspacePolytope::box(lo, hi);
    const Eigen::VectorXd mid = 0.5 * (lo + hi);
    for (int c = cuts(rng); c > 0; --c) {
      LinearConstraintSet cs;
      cs.normals = Eigen::RowVectorXd::NullaryExpr(p, [&] { return g(rng); });
      cs.offsets = Eigen::VectorXd::Constant(1, (cs.normals * mid)(0) + 0.1 * unit(rng));
      poly = intersect(poly, cs);
    }
    const auto& verts = enumerate_vertices(poly);

    const int T = horizon(rng);
    Response resp = identity_response(n, m, T);
    for (int k = 2; k <= T; ++k) resp.R[static_cast<std::size_t>(k - 1)] = 0.5 * Eigen::MatrixXd::NullaryExpr(n, n, [&] { return g(rng); });
    for (auto& mk : resp.M) mk = 0.5 * Eigen::MatrixXd::NullaryExpr(m, n, [&] { return g(rng); });
    const NormKind norm = trial % 2 ? NormKind::SumAbs : NormKind::MaxAbs;

    double vmax = 0.0;
    for (const auto& v : verts) {
      const auto gs = global_at(model, v);
      vmax = std::max(vmax, margin_of(gs.A, gs.B, resp, norm));
    }
    int drawn = 0;
    while (drawn < 1000) {
      Eigen::VectorXd a(p);
      for (int k = 0; k < p; ++k) a[k] = lo[k] + (hi[k] - lo[k]) * unit(rng);
      if (!poly.contains(a, 0.0)) continue;
      ++drawn;
      const auto gs = global_at(model, a);
      worst = std::max(worst, margin_of(gs.A, gs.B, resp, norm) - vmax);
    }
  }
  return {worst <= 1e-7, fmt("max interior margin minus vertex maximum %.3g", worst)};
}

Outcome lp_oracle() {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> nvar(1, 6), nrow(1, 14);
  int mismatches = 0, optimal = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto prog = testing_oracle::random_lp(rng, nvar(rng), nrow(rng));
    const auto expected = testing_oracle::brute_force(prog);
    const auto got = lp::solve(prog);
    if (got.status != expected.status) {
      ++mismatches;
      continue;
    }
    if (got.status == lp::LpStatus::Optimal) {
      ++optimal;
      worst = std::max(worst, std::abs(got.objective_value - expected.objective_value));
    }
  }
  return {mismatches == 0 && worst <= 1e-7, std::to_string(mismatches) + " status mismatches, " + std::to_string(optimal) +
                                                 " optimal, max objective gap " + fmt("%.3g", worst)};
}

Outcome adversarial_switching() {
  const auto s = chain5_scenario();
  Eigen::VectorXd lo = s.true_alpha, hi = s.true_alpha;
  for (int k = 0; k < 3; ++k) {
    lo[k] -= 0.03;
    hi[k] += 0.03;
  }
  const auto verts = enumerate_vertices(HalfspacePolytope::box(lo, hi));
  SynthesisRequest req;
  req.model = &s.model;
  req.vertices = verts;
  req.T = s.horizon_T;
  req.norm = s.norm;
  req.lambda_star = s.lambda_star;
  req.cost = s.cost;
  const auto res = two_phase_solve(req);
  if (res.status != SynthesisStatus::Feasible || !(res.lambda < 1.0)) return {false, fmt("synthesized lambda %.4f", res.lambda)};

  std::vector<GlobalSystem> plants;
  for (const auto& v : verts) plants.push_back(global_at(s.model, v));
  const int steps = 500;
  const double x0 = vector_norm(s.norm, s.x0);
  std::vector<double> bound;
  for (int t = 0; t <= steps; ++t) bound.push_back(theorem1_bounds(res.response, s.norm, res.lambda, 0.0, s.eta, x0, t).x_bound);

  double ratio = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, plants.size() - 1);
    const auto kind = seed % 2 ? DisturbanceKind::AdversarialVertex : DisturbanceKind::UniformBox;
    ControllerState state(s.horizon_T, 5);
    Eigen::VectorXd x = s.x0;
    for (int t = 0; t <= steps; ++t) {
      ratio = std::max(ratio, vector_norm(s.norm, x) / bound[static_cast<std::size_t>(t)]);
      const auto d = delta_update(state, x, res.response);
      const auto u = control_output(state, res.response);
      const auto w = gen_disturbance(kind, s.model, s.eta, s.norm, rng, d);
      const auto& g = plants[pick(rng)];
      x = g.A * x + g.B * u + w;
    }
  }
  return {ratio <= 1.0 + 1e-9, fmt("lambda %.4f", res.lambda) + ", " + std::to_string(verts.size()) +
                                   " vertices, max ||x_t|| / envelope " + fmt("%.3g", ratio)};
}

Outcome coincidence() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto s = slsac::testing::coincidence_scenario(seed);
    const auto a = run_algorithm1(s);
    const auto b = run_algorithm2(s);
    if (a.steps.size() != b.steps.size()) return {false, "trace lengths differ"};
    for (std::size_t t = 0; t < a.steps.size(); ++t) {
      worst = std::max(worst, (a.steps[t].x - b.steps[t].x).cwiseAbs().maxCoeff());
      worst = std::max(worst, (a.steps[t].u - b.steps[t].u).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= 1e-7, fmt("max trajectory gap %.3g over 3 seeds", worst)};
}

}  // namespace

int main() {
  criterion(1, "open-loop instability", open_loop_instability);
  criterion(7, "growth-bound oracle", growth_bound_oracle);
  criterion(8, "vertex sufficiency", vertex_sufficiency);
  criterion(9, "LP oracle equivalence", lp_oracle);
  criterion(11, "central/distributed coincidence", coincidence);
  criterion(6, "perfect-knowledge margin", perfect_knowledge);
  criterion(10, "adversarial vertex switching", adversarial_switching);

  const auto t0 = std::chrono::steady_clock::now();
  SeededRuns runs;
  try {
    runs = run_seeds();
  } catch (const std::exception& e) {
    for (int id = 2; id <= 5; ++id) report(id, "seeded chain-5 runs", {false, e.what()}, 0.0);
    std::printf("%d criteria failed\n", failures);
    return 1;
  }
  std::printf("ten 200-step chain-5 runs took %.1fs\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  criterion(2, "ground-truth consistency", [&] { return ground_truth(runs); });
  criterion(3, "margin monotonicity", [&] { return margin_monotonicity(runs); });
  criterion(4, "recursive feasibility", [&] { return recursive_feasibility(runs); });
  criterion(5, "learning to stability", [&] { return learning_to_stability(runs); });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
