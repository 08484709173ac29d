#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "slsac/synthesis.hpp"

using namespace slsac;

namespace {

/// x+ = a x + b u with alpha = (a, b).
StructuredModel scalar_model() {
  StructuredModel m;
  m.n_nodes = 1;
  m.p = 2;
  m.state_dims = {1};
  m.input_dims = {1};
  m.basis_A[{0, 0}] = {Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 1)};
  m.basis_B = {{Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Ones(1, 1)}};
  return m;
}

VertexList scalar_vertices(double a_lo, double a_hi) {
  return {Eigen::Vector2d(a_lo, 1.0), Eigen::Vector2d(a_hi, 1.0)};
}

SynthesisRequest scalar_request(const StructuredModel& m, double a_lo, double a_hi, int T = 2) {
  SynthesisRequest req;
  req.model = &m;
  req.vertices = scalar_vertices(a_lo, a_hi);
  req.T = T;
  req.cost = default_cost(1, 1);
  return req;
}

/// Two scalar nodes, one input at node 0:
/// A = [[a0, a2], [0.3 a3, a1]], B = [a3; 0].
StructuredModel pair_model() {
  StructuredModel m;
  m.n_nodes = 2;
  m.p = 4;
  m.state_dims = {1, 1};
  m.input_dims = {1, 0};
  auto e = [](int k, double v) {
    std::vector<Eigen::MatrixXd> out(4, Eigen::MatrixXd::Zero(1, 1));
    out[static_cast<std::size_t>(k)](0, 0) = v;
    return out;
  };
  m.basis_A[{0, 0}] = e(0, 1.0);
  m.basis_A[{1, 1}] = e(1, 1.0);
  m.basis_A[{0, 1}] = e(2, 1.0);
  m.basis_A[{1, 0}] = e(3, 0.3);
  m.basis_B = {e(3, 1.0), std::vector<Eigen::MatrixXd>(4, Eigen::MatrixXd::Zero(1, 0))};
  return m;
}

double scalar_margin(double a, double r2, double m1, double m2) {
  return std::abs(r2 - a - m1) + std::abs(a * r2 + m2);
}

}  // namespace

TEST(CentralSynthesis, ScalarIntervalMatchesGridOracle) {
  const auto m = scalar_model();
  auto req = scalar_request(m, 0.4, 0.6);
  const auto res = two_phase_solve(req);
  ASSERT_EQ(res.status, SynthesisStatus::Feasible);
  EXPECT_NEAR(res.phase1_lambda, 0.1, 1e-7);

  // Brute force over the free entries (R(2), M(1), M(2)) and over a.
  double best = lp::kInf;
  for (int i = -20; i <= 20; ++i)
    for (int j = -20; j <= 20; ++j)
      for (int k = -20; k <= 20; ++k) {
        double worst = 0.0;
        for (int q = 0; q <= 20; ++q)
          worst = std::max(worst, scalar_margin(0.4 + 0.01 * q, 0.05 * i, 0.05 * j, 0.05 * k));
        best = std::min(best, worst);
      }
  EXPECT_NEAR(best, 0.1, 1e-12);
  EXPECT_GE(res.phase1_lambda, best - 1e-7);
}

TEST(CentralSynthesis, ExactKnowledgeIsDeadbeat) {
  const auto s = chain5_scenario();
  SynthesisRequest req;
  req.model = &s.model;
  req.vertices = {s.true_alpha};
  req.T = 6;
  req.cost = s.cost;
  const auto built = build_program(req, SynthesisObjective::Lambda);
  const auto sol = lp::solve(built.lp);
  ASSERT_EQ(sol.status, lp::LpStatus::Optimal);
  EXPECT_LE(sol.objective_value, 1e-7);
  const auto g = global_at(s.model, s.true_alpha);
  for (const auto& d : delta_residuals(g.A, g.B, built.vars.extract(sol.point))) EXPECT_LE(d.cwiseAbs().maxCoeff(), 1e-7);

  const auto res = two_phase_solve(req);
  ASSERT_EQ(res.status, SynthesisStatus::Feasible);
  EXPECT_LE(res.phase1_lambda, 1e-7);
  EXPECT_EQ(res.phase, SynthesisPhase::Performance);
  EXPECT_LE(res.lambda, req.lambda_star + 1e-7);
}

TEST(CentralSynthesis, LargeUncertaintySkipsPerformancePhase) {
  const auto m = scalar_model();
  const auto res = two_phase_solve(scalar_request(m, 0.5, 3.5));
  ASSERT_EQ(res.status, SynthesisStatus::Feasible);
  EXPECT_EQ(res.phase, SynthesisPhase::Robustness);
  EXPECT_NEAR(res.lambda, 1.5, 1e-7);
  EXPECT_DOUBLE_EQ(res.phase1_lambda, res.lambda);
}

TEST(CentralSynthesis, ZeroAdaptationMarginFreezesResponse) {
  const auto m = scalar_model();
  auto req = scalar_request(m, 0.45, 0.55);
  Response prev = identity_response(1, 1, 2);
  prev.R[1](0, 0) = 0.3;
  prev.M[0](0, 0) = -0.2;
  req.previous = prev;
  req.delta_history = {Eigen::VectorXd::Constant(1, 1.0)};
  req.m_a = 0.0;
  const auto res = two_phase_solve(req);
  ASSERT_EQ(res.status, SynthesisStatus::Feasible);
  EXPECT_NEAR(res.response.r(2)(0, 0), 0.3, 1e-9);
  EXPECT_DOUBLE_EQ(res.response.r(1)(0, 0), 1.0);
}

TEST(CentralSynthesis, PhaseTwoFirstGivesSameAnswer) {
  const auto m = scalar_model();
  for (double width : {0.05, 0.2, 1.0, 3.0}) {
    auto req = scalar_request(m, 0.5 - width / 2, 0.5 + width / 2, 3);
    const auto a = two_phase_solve(req);
    req.phase2_first = true;
    const auto b = two_phase_solve(req);
    ASSERT_EQ(a.status, b.status);
    EXPECT_EQ(a.phase, b.phase) << width;
    EXPECT_NEAR(a.objective_value, b.objective_value, 1e-7) << width;
    EXPECT_NEAR(a.lambda, b.lambda, 1e-7) << width;
    if (a.phase == SynthesisPhase::Performance) {
      EXPECT_LE(b.lambda, req.lambda_star + 1e-7);
      EXPECT_TRUE(std::isnan(b.phase1_lambda));
    }
  }
}

TEST(CentralSynthesis, Deterministic) {
  const auto m = pair_model();
  SynthesisRequest req;
  req.model = &m;
  req.vertices = enumerate_vertices(HalfspacePolytope::box(Eigen::Vector4d(0.5, 0.4, 0.1, 0.8), Eigen::Vector4d(0.9, 1.0, 0.3, 1.2)));
  req.T = 4;
  req.cost = default_cost(2, 1);
  const auto a = two_phase_solve(req);
  const auto b = two_phase_solve(req);
  ASSERT_EQ(a.status, SynthesisStatus::Feasible);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.lambda, b.lambda);
  for (int k = 1; k <= req.T; ++k) {
    EXPECT_EQ(a.response.r(k), b.response.r(k));
    EXPECT_EQ(a.response.m(k), b.response.m(k));
  }
}

TEST(CentralSynthesis, VertexMarginBoundsInteriorPlants) {
  const auto m = pair_model();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::Vector4d lo(0.3 + 0.4 * u(rng), 0.2 + 0.6 * u(rng), -0.2 + 0.3 * u(rng), 0.6 + 0.3 * u(rng));
    Eigen::Vector4d hi = lo + Eigen::Vector4d(0.3 * u(rng), 0.4 * u(rng), 0.2 * u(rng), 0.5 * u(rng));
    SynthesisRequest req;
    req.model = &m;
    req.vertices = enumerate_vertices(HalfspacePolytope::box(lo, hi));
    req.T = 3;
    req.cost = default_cost(2, 1);
    const auto res = two_phase_solve(req);
    ASSERT_EQ(res.status, SynthesisStatus::Feasible);
    for (int s = 0; s < 1000; ++s) {
      Eigen::Vector4d a;
      for (int k = 0; k < 4; ++k) a[k] = lo[k] + (hi[k] - lo[k]) * u(rng);
      const auto g = global_at(m, a);
      EXPECT_LE(margin_of(g.A, g.B, res.response, req.norm), res.lambda + 1e-7);
    }
  }
}

TEST(NodeSynthesis, FreeSupportMatchesMask) {
  const auto s = chain5_scenario();
  const int T = 8;
  // Node 2: R blocks need k >= 2 and k > |j - 2|; M blocks exist only at the
  // actuated ends (delay 2) for k > 2.
  int r = 0, mm = 0;
  for (int j = 0; j < 5; ++j)
    for (int k = 1; k <= T; ++k) {
      const int d = std::abs(j - 2);
      if (k >= 2 && k > d) ++r;
      if ((j == 0 || j == 4) && k > d) ++mm;
    }
  EXPECT_EQ(r, 33);
  EXPECT_EQ(mm, 12);
  const auto c = count_free_support(s.model, s.topology, 2, T);
  EXPECT_EQ(c.r, r);
  EXPECT_EQ(c.m, mm);

  SynthesisRequest req;
  req.mode = SynthesisMode::Node;
  req.node = 2;
  req.model = &s.model;
  req.topology = &s.topology;
  req.vertices = enumerate_vertices(s.prior);
  req.T = T;
  req.cost = s.cost;
  const auto built = build_program(req, SynthesisObjective::Lambda);
  int free = 0;
  for (int k = 0; k < T; ++k) {
    free += static_cast<int>((built.vars.R[static_cast<std::size_t>(k)].array() >= 0).count());
    free += static_cast<int>((built.vars.M[static_cast<std::size_t>(k)].array() >= 0).count());
  }
  EXPECT_EQ(free, c.total());
}

TEST(NodeSynthesis, LambdaIsGeometricSumOfRate) {
  const auto s = chain5_scenario();
  const auto verts = enumerate_vertices(s.prior);
  for (int i = 0; i < 5; ++i) {
    SynthesisRequest req;
    req.mode = SynthesisMode::Node;
    req.node = i;
    req.model = &s.model;
    req.topology = &s.topology;
    req.vertices = verts;
    req.T = s.horizon_T;
    req.rho = s.rho;
    req.cost = s.cost;
    const auto res = two_phase_solve(req);
    ASSERT_EQ(res.status, SynthesisStatus::Feasible) << i;
    EXPECT_NEAR(res.lambda, res.rate * (1.0 - std::pow(s.rho, s.horizon_T)) / (1.0 - s.rho), 1e-9);
    EXPECT_NEAR(res.rate, tight_rate(s.model, res.response, verts, req.norm, req.rho), 1e-12);
    // The column response respects the delay sparsity.
    for (int j = 0; j < 5; ++j)
      for (int k = 1; k <= req.T; ++k) {
        if (k > 1 && k <= s.topology.delay(j, i)) {
          EXPECT_EQ(res.response.r(k)(j, 0), 0.0);
        }
        if (k <= s.topology.delay(j, i) && s.model.nu(j) > 0) {
          const int row = j == 0 ? 0 : 1;
          EXPECT_EQ(res.response.m(k)(row, 0), 0.0);
        }
      }
  }
}

TEST(NodeSynthesis, SingleNodeAgreesWithCentral) {
  const auto m = scalar_model();
  const auto topo = Topology::full(1);
  for (double width : {0.0, 0.1, 0.4}) {
    auto req = scalar_request(m, 0.5 - width / 2, 0.5 + width / 2, 3);
    const auto central = two_phase_solve(req);
    req.mode = SynthesisMode::Node;
    req.node = 0;
    req.topology = &topo;
    const auto node = two_phase_solve(req);
    ASSERT_EQ(central.status, SynthesisStatus::Feasible);
    ASSERT_EQ(node.status, SynthesisStatus::Feasible);
    // The geometric rate bound dominates the plain sum, with equality at zero.
    EXPECT_GE(node.phase1_lambda, central.phase1_lambda - 1e-7);
    if (width == 0.0) {
      EXPECT_LE(node.phase1_lambda, 1e-7);
      EXPECT_LE(central.phase1_lambda, 1e-7);
    }
  }
}

TEST(NormBound, ExpansionMatchesEpigraph) {
  std::mt19937_64 rng(5);
  for (NormKind norm : {NormKind::MaxAbs, NormKind::SumAbs}) {
    for (int trial = 0; trial < 20; ++trial) {
      auto solve_with = [&](std::size_t limit, std::mt19937_64 g) {
        std::uniform_real_distribution<double> v(-1.0, 1.0);
        detail::LpBuilder b;
        const int x0 = b.add_variable(-5, 5, v(g));
        const int x1 = b.add_variable(-5, 5, v(g));
        const int bound = b.add_variable(-lp::kInf, lp::kInf, 1.0);
        std::vector<detail::NormTerm> terms;
        for (int t = 0; t < 2; ++t) {
          lp::AffineMatrix mat(2, 2);
          for (auto& e : mat.entries) {
            e = lp::AffineExpr(v(g));
            e.add(x0, v(g)).add(x1, v(g));
          }
          terms.emplace_back(norm, mat, 64);
        }
        std::vector<detail::NormTerm*> ptrs{&terms[0], &terms[1]};
        detail::add_norm_sum_bound(b, norm, ptrs, lp::AffineExpr::variable(bound), limit);
        return lp::solve(b.build());
      };
      const std::mt19937_64 seed(rng());
      const auto expanded = solve_with(64, seed);
      const auto epigraph = solve_with(0, seed);
      ASSERT_EQ(expanded.status, lp::LpStatus::Optimal);
      ASSERT_EQ(epigraph.status, lp::LpStatus::Optimal);
      EXPECT_NEAR(expanded.objective_value, epigraph.objective_value, 1e-8);
    }
  }
}
