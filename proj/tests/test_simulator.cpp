#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "scenarios.hpp"
#include "slsac/simulator.hpp"
#include "slsac/trace.hpp"

using namespace slsac;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("slsac_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

bool all_passed(const std::vector<CheckResult>& checks) {
  bool ok = true;
  for (const auto& c : checks) {
    EXPECT_TRUE(c.passed) << c.property << ": " << c.detail;
    ok = ok && c.passed;
  }
  return ok;
}

}  // namespace

TEST(Plant, ZeroStaysZero) {
  const auto s = chain5_scenario();
  const auto blocks = assemble(s.model, s.true_alpha);
  const auto x = step_plant(s.model, blocks, Eigen::VectorXd::Zero(5), Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(5));
  EXPECT_TRUE(x.isZero(0.0));
}

TEST(Plant, ImpulseSpreadsToNeighborsOnly) {
  const auto s = chain5_scenario();
  const auto blocks = assemble(s.model, s.true_alpha);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(5);
  x[2] = 1.0;
  const auto next = step_plant(s.model, blocks, x, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(5));
  EXPECT_EQ(next[0], 0.0);
  EXPECT_EQ(next[4], 0.0);
  EXPECT_NE(next[1], 0.0);
  EXPECT_NE(next[2], 0.0);
  EXPECT_NE(next[3], 0.0);
}

TEST(Plant, MatchesDenseSystem) {
  const auto s = chain5_scenario();
  const auto blocks = assemble(s.model, s.true_alpha);
  const auto g = global_matrices(s.model, blocks);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x(5), u(2), w(5);
    for (auto* v : {&x, &u, &w})
      for (auto& e : *v) e = n(rng);
    EXPECT_TRUE((step_plant(s.model, blocks, x, u, w) - (g.A * x + g.B * u + w)).isZero(1e-12));
  }
}

TEST(Disturbance, ZeroKind) {
  const auto s = chain5_scenario();
  std::mt19937_64 rng(1);
  EXPECT_TRUE(gen_disturbance(DisturbanceKind::Zero, s.model, 0.5, NormKind::MaxAbs, rng).isZero(0.0));
}

TEST(Disturbance, UniformBoxWithinBound) {
  const auto s = chain5_scenario();
  std::mt19937_64 rng(2);
  for (int t = 0; t < 2000; ++t) {
    const auto w = gen_disturbance(DisturbanceKind::UniformBox, s.model, 0.5, NormKind::MaxAbs, rng);
    EXPECT_LE(w.cwiseAbs().maxCoeff(), 0.5);
  }
  for (int t = 0; t < 2000; ++t) {
    const auto w = gen_disturbance(DisturbanceKind::UniformBox, s.model, 0.5, NormKind::SumAbs, rng);
    EXPECT_LE(w.cwiseAbs().maxCoeff(), 0.5);
  }
}

TEST(Disturbance, AdversarialSitsOnTheBound) {
  const auto s = chain5_scenario();
  std::mt19937_64 rng(3);
  Eigen::VectorXd hint(5);
  hint << 1, -1, 2, -3, 0.5;
  const auto w = gen_disturbance(DisturbanceKind::AdversarialVertex, s.model, 0.5, NormKind::MaxAbs, rng, hint);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(w[k], hint[k] < 0 ? -0.5 : 0.5);
}

TEST(Disturbance, SameSeedSameSequence) {
  const auto s = chain5_scenario();
  std::mt19937_64 a(9), b(9);
  for (int t = 0; t < 100; ++t)
    EXPECT_EQ(gen_disturbance(DisturbanceKind::UniformBox, s.model, 0.5, NormKind::MaxAbs, a),
              gen_disturbance(DisturbanceKind::UniformBox, s.model, 0.5, NormKind::MaxAbs, b));
}

TEST(Bus, DeliversExactlyAtDueTimeInOrder) {
  MessageBus bus;
  bus.send(0, 1, 0, 2, DeltaShare{0, Eigen::VectorXd::Constant(1, 1.0)});
  bus.send(0, 1, 1, 2, DeltaShare{1, Eigen::VectorXd::Constant(1, 2.0)});
  bus.send(2, 1, 1, 0, DeltaShare{1, Eigen::VectorXd::Constant(1, 3.0)});
  auto at1 = bus.deliver(1);
  ASSERT_EQ(at1.size(), 1u);
  EXPECT_EQ(at1[0].from, 2);
  EXPECT_TRUE(bus.deliver(1).empty());
  auto at2 = bus.deliver(2);
  ASSERT_EQ(at2.size(), 1u);
  EXPECT_EQ(std::get<DeltaShare>(at2[0].payload).time, 0);
  auto at3 = bus.deliver(3);
  ASSERT_EQ(at3.size(), 1u);
  EXPECT_EQ(std::get<DeltaShare>(at3[0].payload).time, 1);
  EXPECT_EQ(bus.pending(), 0u);
}

TEST(Bus, RejectsOvertakingAndMissedTicks) {
  MessageBus bus;
  bus.send(0, 1, 0, 3, DeltaShare{});
  EXPECT_THROW(bus.send(0, 1, 1, 1, DeltaShare{}), Error);
  EXPECT_THROW(bus.send(0, 1, 1, -1, DeltaShare{}), Error);
  EXPECT_THROW(bus.deliver(5), Error);
}

TEST(Controllers, DistributedMatchesCentralWithZeroDelays) {
  const auto s = slsac::testing::coincidence_scenario(1);
  const auto& model = s.model;
  const int T = 4;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 0.3);
  Response resp = identity_response(3, 3, T);
  for (int k = 2; k <= T; ++k)
    for (auto& e : resp.R[static_cast<std::size_t>(k - 1)].reshaped()) e = n(rng);
  for (auto& m : resp.M)
    for (auto& e : m.reshaped()) e = n(rng);

  ControllerState central(T, 3);
  std::vector<NodeController> nodes;
  for (int j = 0; j < 3; ++j) {
    nodes.emplace_back(model, s.topology, j, T);
    for (int i = 0; i < 3; ++i) {
      std::vector<Eigen::MatrixXd> r, m;
      for (int k = 1; k <= T; ++k) {
        r.push_back(resp.r(k).block(j, i, 1, 1));
        m.push_back(resp.m(k).block(j, i, 1, 1));
      }
      nodes.back().receive_blocks(i, 0, r, m);
    }
  }
  for (int t = 0; t < 30; ++t) {
    Eigen::VectorXd y(3);
    for (auto& e : y) e = n(rng);
    const auto d = delta_update(central, y, resp);
    const auto u = control_output(central, resp);
    Eigen::VectorXd dd(3), uu(3);
    for (int j = 0; j < 3; ++j) dd[j] = nodes[static_cast<std::size_t>(j)].delta_update(t, y.segment(j, 1))[0];
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i < 3; ++i)
        if (i != j) nodes[static_cast<std::size_t>(i)].receive_delta(j, t, dd.segment(j, 1));
    for (int j = 0; j < 3; ++j) uu[j] = nodes[static_cast<std::size_t>(j)].control_output(t)[0];
    EXPECT_TRUE((d - dd).isZero(1e-12)) << t;
    EXPECT_TRUE((u - uu).isZero(1e-12)) << t;
  }
}

TEST(Simulation, CentralAndDistributedCoincide) {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto s = slsac::testing::coincidence_scenario(seed);
    const auto a = run_algorithm1(s);
    const auto b = run_algorithm2(s);
    ASSERT_EQ(a.steps.size(), b.steps.size());
    for (std::size_t t = 0; t < a.steps.size(); ++t) {
      EXPECT_LE((a.steps[t].x - b.steps[t].x).cwiseAbs().maxCoeff(), 1e-7) << t;
      EXPECT_LE((a.steps[t].u - b.steps[t].u).cwiseAbs().maxCoeff(), 1e-7) << t;
    }
  }
}

TEST(Simulation, ExactPriorIsDeadbeat) {
  auto s = slsac::testing::short_chain5(20);
  s.prior = point_prior(s.true_alpha);
  s.horizon_T = 6;
  s.topology = Topology::full(5);
  s.lambda_star = 1e-8;
  s.margins.m_a = 0.0;
  s.disturbance_kind = DisturbanceKind::Zero;
  const auto tr = run_algorithm1(s);
  for (const auto& r : tr.steps) {
    if (r.t >= 1) {
      EXPECT_LE(r.delta.cwiseAbs().maxCoeff(), 1e-6) << r.t;
    }
    if (r.t >= s.horizon_T) {
      EXPECT_LE(r.x.cwiseAbs().maxCoeff(), 1e-6) << r.t;
    }
  }
  all_passed(check_trace(tr));
}

TEST(Simulation, TraceRoundTripAndAudit) {
  const auto tr = run_algorithm2(slsac::testing::short_chain5(12));
  const auto dir = temp_dir("roundtrip");
  write_trace(tr, dir);
  const auto back = read_trace(dir);
  ASSERT_EQ(back.steps.size(), tr.steps.size());
  for (std::size_t t = 0; t < tr.steps.size(); ++t) {
    EXPECT_EQ(back.steps[t].x, tr.steps[t].x);
    EXPECT_EQ(back.steps[t].u, tr.steps[t].u);
    EXPECT_EQ(back.steps[t].lambda, tr.steps[t].lambda);
    EXPECT_EQ(back.steps[t].mu, tr.steps[t].mu);
  }
  EXPECT_EQ(back.snapshots.size(), tr.snapshots.size());
  EXPECT_TRUE(all_passed(check_trace(back)));
  EXPECT_TRUE(check_replay(back).passed);

  auto bad = back;
  bad.steps[5].x[2] += 1e-3;
  bool found = false;
  for (const auto& c : check_trace(bad))
    if (c.property == "plant_recursion") {
      found = true;
      EXPECT_FALSE(c.passed);
      EXPECT_NE(c.detail.find("step 5"), std::string::npos) << c.detail;
    }
  EXPECT_TRUE(found);
  std::filesystem::remove_all(dir);
}

TEST(Simulation, CorruptTraceIsRejected) {
  const auto tr = run_algorithm2(slsac::testing::short_chain5(3));
  const auto dir = temp_dir("corrupt");
  write_trace(tr, dir);
  {
    std::ofstream f(dir / "trace.csv", std::ios::app);
    f << "1,2,3\n";
  }
  try {
    read_trace(dir);
    ADD_FAILURE() << "corrupt trace accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::CorruptTrace);
  }
  std::filesystem::remove_all(dir);
}

TEST(Simulation, ReplayIsBitIdentical) {
  const auto tr = run_algorithm1(slsac::testing::coincidence_scenario(3));
  EXPECT_TRUE(check_replay(tr).passed);
}

TEST(Simulation, PerturbationRespectsDelays) {
  // Kick y^i at t0 and compare u^j with the unkicked run: nothing may change
  // before t0 + d_{j<-i}. Inputs sit at nodes 0 and 4, giving ten edges.
  const auto s = slsac::testing::short_chain5(10);
  const int t0 = 3;
  const auto base = run_algorithm2(s);
  for (int i = 0; i < 5; ++i) {
    SimulationOptions opt;
    opt.measurement_kick = std::make_tuple(i, t0, 1e-6);
    const auto kicked = run_algorithm2(s, opt);
    for (int input = 0; input < 2; ++input) {
      const int j = input == 0 ? 0 : 4;
      const int d = s.topology.delay(j, i);
      bool changed = false;
      for (int t = 0; t <= s.steps; ++t) {
        const bool same = kicked.steps[static_cast<std::size_t>(t)].u[input] == base.steps[static_cast<std::size_t>(t)].u[input];
        if (t < t0 + d) {
          EXPECT_TRUE(same) << "edge " << i << "->" << j << " t=" << t;
        }
        if (!same) changed = true;
      }
      EXPECT_TRUE(changed) << "edge " << i << "->" << j;
    }
  }
}
