#pragma once

// Deterministic closed-loop engine: plant stepping, bounded disturbances, the
// delay-stamped message bus and the central / distributed adaptive loops.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "slsac/errors.hpp"
#include "slsac/estimation.hpp"
#include "slsac/model.hpp"
#include "slsac/norm.hpp"
#include "slsac/polytope.hpp"
#include "slsac/sls.hpp"
#include "slsac/synthesis.hpp"

namespace slsac {

// ---------------------------------------------------------------------------
// Plant and disturbances

/// x^j_{t+1} = sum_{i in N(j)} A^{j<-i} x^i_t + B^j u^j_t + w^j_t.
inline Eigen::VectorXd step_plant(const StructuredModel& model, const SystemBlocks& blocks, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& u, const Eigen::VectorXd& w) {
  require(x.size() == model.total_state() && w.size() == model.total_state(), ErrorKind::DimensionMismatch,
          "plant state/disturbance length");
  require(u.size() == model.total_input(), ErrorKind::DimensionMismatch, "plant input length");
  Eigen::VectorXd next = w;
  for (const auto& [key, a] : blocks.A) {
    const auto [j, i] = key;
    next.segment(model.state_offset(j), model.nx(j)) += a * x.segment(model.state_offset(i), model.nx(i));
  }
  for (int j = 0; j < model.n_nodes; ++j)
    if (model.nu(j) > 0)
      next.segment(model.state_offset(j), model.nx(j)) +=
          blocks.B[static_cast<std::size_t>(j)] * u.segment(model.input_offset(j), model.nu(j));
  return next;
}

/// Guards the per-node bound ||w^j|| <= eta.
inline void check_disturbance(const StructuredModel& model, const Eigen::VectorXd& w, double eta, NormKind norm) {
  for (int j = 0; j < model.n_nodes; ++j)
    if (vector_norm(norm, w.segment(model.state_offset(j), model.nx(j))) > eta * (1.0 + 1e-12) + 1e-15)
      fail(ErrorKind::DisturbanceBoundViolated, "disturbance at node " + std::to_string(j) + " exceeds its bound");
}

/// One sample per node inside the radius-`eta` ball. `hint` (per node) steers
/// the adversarial vertex choice; an empty hint means all-positive.
inline Eigen::VectorXd gen_disturbance(DisturbanceKind kind, const StructuredModel& model, double eta, NormKind norm,
                                       std::mt19937_64& rng, const Eigen::VectorXd& hint = {}) {
  const int n = model.total_state();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  if (kind == DisturbanceKind::Zero || eta == 0.0) return w;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  std::bernoulli_distribution coin(0.5);
  for (int j = 0; j < model.n_nodes; ++j) {
    const int off = model.state_offset(j);
    const int d = model.nx(j);
    if (kind == DisturbanceKind::UniformBox) {
      if (norm == NormKind::MaxAbs) {
        for (int r = 0; r < d; ++r) w[off + r] = eta * unit(rng);
      } else {
        // Uniform in the l1 ball: normalized exponentials (one slack coordinate) with random signs.
        std::vector<double> e(static_cast<std::size_t>(d + 1));
        double s = 0.0;
        for (auto& x : e) s += (x = expo(rng));
        for (int r = 0; r < d; ++r) w[off + r] = eta * e[static_cast<std::size_t>(r)] / s * (coin(rng) ? 1.0 : -1.0);
      }
    } else {
      Eigen::VectorXd h = hint.size() == n ? Eigen::VectorXd(hint.segment(off, d)) : Eigen::VectorXd::Ones(d);
      if (norm == NormKind::MaxAbs) {
        for (int r = 0; r < d; ++r) w[off + r] = h[r] < 0.0 ? -eta : eta;
      } else {
        Eigen::Index r = 0;
        h.cwiseAbs().maxCoeff(&r);
        w[off + r] = h[r] < 0.0 ? -eta : eta;
      }
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Message bus

struct ConstraintShare {
  LinearConstraintSet constraints;
};
struct BlockShare {
  std::vector<Eigen::MatrixXd> R;  // receiver's rows of the sender's column, [k-1]
  std::vector<Eigen::MatrixXd> M;
};
struct DeltaShare {
  int time = 0;
  Eigen::VectorXd delta;
};
using Payload = std::variant<ConstraintShare, BlockShare, DeltaShare>;

struct Message {
  int from = 0;
  int to = 0;
  int stamp = 0;
  int due = 0;
  Payload payload;
};

/// FIFO queue per (sender, receiver) edge. A message sent at t over an edge
/// with delay d is handed out exactly at t + d.
class MessageBus {
 public:
  void send(int from, int to, int stamp, int delay, Payload payload) {
    require(delay >= 0, ErrorKind::CausalityViolation, "negative delay");
    auto& q = queues_[{from, to}];
    const int due = stamp + delay;
    require(q.empty() || q.back().due <= due, ErrorKind::CausalityViolation, "message would overtake an earlier one");
    q.push_back(Message{from, to, stamp, due, std::move(payload)});
  }

  /// Every message due at or before t; anything overdue means a missed tick.
  std::vector<Message> deliver(int t) {
    std::vector<Message> out;
    for (auto& [edge, q] : queues_) {
      while (!q.empty() && q.front().due <= t) {
        require(q.front().due == t, ErrorKind::CausalityViolation, "message delivered after its due time");
        out.push_back(std::move(q.front()));
        q.pop_front();
      }
    }
    return out;
  }

  std::size_t pending() const {
    std::size_t s = 0;
    for (const auto& [edge, q] : queues_) s += q.size();
    return s;
  }

 private:
  std::map<std::pair<int, int>, std::deque<Message>> queues_;
};

// ---------------------------------------------------------------------------
// Trace

enum class Algorithm { Central, Dlar };

inline std::string to_string(Algorithm a) { return a == Algorithm::Central ? "central" : "dlar"; }
inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "central") return Algorithm::Central;
  if (s == "dlar") return Algorithm::Dlar;
  fail(ErrorKind::Config, "unknown algorithm '" + s + "'");
}

struct StepRecord {
  int t = 0;
  Eigen::VectorXd x, u, w, v;
  Eigen::VectorXd delta;        // all nodes stacked
  std::vector<double> lambda;   // one per node (dlar) or a single entry (central)
  std::vector<int> phase;       // 0 robustness, 1 performance, -1 no synthesis this step
  double mu = 0.0;              // true margin of the controller at t
  double row_sum = 0.0;         // x_t <= row_sum * max window delta size
  double gamma = 0.0;           // envelope on the delta size
  double x_envelope = 0.0;
  double delta_size = 0.0;      // ||delta_t|| (central) or sum_j ||delta^j_t|| (dlar)
  double aggregate_rhs = 0.0;   // one-step bound on delta_size
  double feasibility_violation = 0.0;  // previous solution against the current constraints
  bool truth_contained = true;
  double synth_seconds = 0.0;
};

struct Snapshot {
  int t = 0;
  int node = -1;  // -1: central polytope
  HalfspacePolytope polytope;
};

struct SimulationTrace {
  Algorithm algorithm = Algorithm::Dlar;
  Scenario scenario;
  double eta_hat = 0.0;
  double drive = 0.0;  // constant part of the one-step bound
  std::vector<StepRecord> steps;
  std::vector<Snapshot> snapshots;
  double wall_seconds = 0.0;
};

struct SimulationOptions {
  const std::vector<Eigen::VectorXd>* w_override = nullptr;  // replay
  const std::vector<Eigen::VectorXd>* v_override = nullptr;
  std::string lp_dump_dir;
  /// Perturbation hook for causality tests: added to the measurement y^node_t at `time`.
  std::optional<std::tuple<int, int, double>> measurement_kick;
};

namespace detail {

inline double max_vertex_norm_A(const StructuredModel& model, const HalfspacePolytope& prior, NormKind norm) {
  double worst = 0.0;
  for (const auto& v : enumerate_vertices(prior)) worst = std::max(worst, induced_norm(norm, global_at(model, v).A));
  return worst;
}

/// Sum of per-node vector norms.
inline double node_norm_sum(const StructuredModel& model, NormKind norm, const Eigen::VectorXd& x) {
  double s = 0.0;
  for (int j = 0; j < model.n_nodes; ++j) s += vector_norm(norm, x.segment(model.state_offset(j), model.nx(j)));
  return s;
}

/// gamma_t = lambda_{t-1} max_{1<=k<=T} gamma_{t-k} + drive, with gamma_0 = z_0.
inline double next_gamma(const std::vector<StepRecord>& steps, int T, double lambda_prev, double drive) {
  double g = 0.0;
  const int t = static_cast<int>(steps.size());
  for (int k = 1; k <= T && t - k >= 0; ++k) g = std::max(g, steps[static_cast<std::size_t>(t - k)].gamma);
  return lambda_prev * g + drive;
}

inline double max_window(const std::vector<StepRecord>& steps, int T, double current, double StepRecord::*field) {
  double g = current;
  const int t = static_cast<int>(steps.size());
  for (int k = 1; k <= T - 1 && t - k >= 0; ++k) g = std::max(g, steps[static_cast<std::size_t>(t - k)].*field);
  return g;
}

inline double what_norm_sum(const StructuredModel& model, const GlobalSystem& g, NormKind norm, const Eigen::VectorXd& w_prev,
                            const Eigen::VectorXd& v_now, const Eigen::VectorXd& v_prev, bool per_node) {
  const Eigen::VectorXd what = w_prev + v_now - g.A * v_prev;
  return per_node ? node_norm_sum(model, norm, what) : vector_norm(norm, what);
}

struct Disturbances {
  const Scenario& s;
  const SimulationOptions& opt;
  std::mt19937_64 rng;

  Eigen::VectorXd v(int t) {
    if (opt.v_override) return (*opt.v_override)[static_cast<std::size_t>(t)];
    if (s.noise_bound == 0.0) return Eigen::VectorXd::Zero(s.model.total_state());
    const auto kind = s.disturbance_kind == DisturbanceKind::Zero ? DisturbanceKind::Zero : DisturbanceKind::UniformBox;
    return gen_disturbance(kind, s.model, s.noise_bound, s.norm, rng);
  }
  Eigen::VectorXd w(int t, const Eigen::VectorXd& hint) {
    if (opt.w_override) return (*opt.w_override)[static_cast<std::size_t>(t)];
    return gen_disturbance(s.disturbance_kind, s.model, s.eta, s.norm, rng, hint);
  }
};

inline std::vector<LinearConstraintSet> observe_all(const Scenario& s, const Eigen::VectorXd& y_prev,
                                                    const Eigen::VectorXd& u_prev, const Eigen::VectorXd& y_now, int t,
                                                    double eta_obs) {
  std::vector<LinearConstraintSet> out;
  for (int j = 0; j < s.model.n_nodes; ++j)
    out.push_back(constraint_from_observation(build_regressors(s.model, y_prev, u_prev, j, y_now, t - 1), eta_obs, s.norm));
  return out;
}

/// Estimation bound for measured data: y_t = A y_{t-1} + B u + (w - A v_{t-1} + v_t).
inline double observation_eta(const Scenario& s, double max_A) { return s.eta + (1.0 + max_A) * s.noise_bound; }

inline std::string dump_prefix(const SimulationOptions& opt, int t, int node) {
  if (opt.lp_dump_dir.empty()) return {};
  return opt.lp_dump_dir + "/t" + std::to_string(t) + (node >= 0 ? "_node" + std::to_string(node) : "_central");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Central adaptive robust control loop

inline SimulationTrace run_algorithm1(const Scenario& s, const SimulationOptions& opt = {}) {
  s.validate();
  const auto wall0 = std::chrono::steady_clock::now();
  const auto& model = s.model;
  const int n = model.total_state();
  const int T = s.horizon_T;
  SimulationTrace trace;
  trace.algorithm = Algorithm::Central;
  trace.scenario = s;
  const double max_A = detail::max_vertex_norm_A(model, s.prior, s.norm);
  const double eta_obs = detail::observation_eta(s, max_A);
  trace.eta_hat = effective_disturbance_bound(s.eta, s.noise_bound, max_A);
  trace.drive = s.margins.m_a;
  const auto truth = assemble(model, s.true_alpha);
  const auto g_true = global_matrices(model, truth);
  detail::Disturbances dist{s, opt, std::mt19937_64(s.seed)};

  HalfspacePolytope P = s.prior;
  ControllerState state(T, n);
  Response resp;
  double lambda = lp::kInf;
  Eigen::VectorXd x = s.x0;
  Eigen::VectorXd y_prev, u_prev, v_prev = Eigen::VectorXd::Zero(n), w_prev = Eigen::VectorXd::Zero(n);
  for (int t = 0; t <= s.steps; ++t) {
    StepRecord rec;
    rec.t = t;
    rec.x = x;
    rec.v = dist.v(t);
    Eigen::VectorXd y = x + rec.v;
    if (t >= 1) P = maybe_compact(update_central(P, detail::observe_all(s, y_prev, u_prev, y, t, eta_obs)));
    const auto& verts = enumerate_vertices(P);
    rec.truth_contained = P.contains(s.true_alpha, 1e-9);
    if (t % s.snapshot_period == 0) trace.snapshots.push_back({t, -1, P});

    const double lambda_prev = lambda;
    if (t == 0 || t % s.resynth_period == 0) {
      SynthesisRequest req;
      req.mode = SynthesisMode::Central;
      req.model = &model;
      req.vertices = verts;
      req.T = T;
      req.norm = s.norm;
      req.rho = s.rho;
      req.lambda_star = s.lambda_star;
      req.m_a = s.margins.m_a;
      req.cost = s.cost;
      req.dump_prefix = detail::dump_prefix(opt, t, -1);
      if (t > 0) {
        req.previous = resp;
        for (int q = 0; q < T; ++q) req.delta_history.push_back(state.delta(q));
        double worst = 0.0;
        for (const auto& v : verts) {
          const auto g = global_at(model, v);
          worst = std::max(worst, margin_of(g.A, g.B, resp, s.norm));
        }
        rec.feasibility_violation = std::max(0.0, worst - lambda_prev);
        req.phase2_first = lambda_prev <= s.lambda_star;
      }
      const auto t0 = std::chrono::steady_clock::now();
      const auto res = two_phase_solve(req);
      rec.synth_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (res.status != SynthesisStatus::Feasible)
        fail(t == 0 ? ErrorKind::InfeasibleAtStart : ErrorKind::RecursiveFeasibilityViolation,
             "central synthesis infeasible at t=" + std::to_string(t));
      resp = res.response;
      lambda = res.lambda;
      rec.phase = {res.phase == SynthesisPhase::Performance ? 1 : 0};
    } else {
      rec.phase = {-1};
    }
    rec.lambda = {lambda};

    if (opt.measurement_kick && std::get<1>(*opt.measurement_kick) == t)
      y.segment(model.state_offset(std::get<0>(*opt.measurement_kick)), model.nx(std::get<0>(*opt.measurement_kick)))
          .array() += std::get<2>(*opt.measurement_kick);
    rec.delta = delta_update(state, y, resp);
    rec.u = control_output(state, resp);
    rec.mu = margin_of(g_true.A, g_true.B, resp, s.norm);

    rec.delta_size = vector_norm(s.norm, rec.delta);
    rec.row_sum = 0.0;
    for (int k = 1; k <= T; ++k) rec.row_sum += induced_norm(s.norm, resp.r(k));
    if (t == 0) {
      rec.gamma = rec.delta_size;
      rec.aggregate_rhs = rec.delta_size;
    } else {
      double zmax = 0.0;
      for (int k = 1; k <= T && t - k >= 0; ++k) zmax = std::max(zmax, trace.steps[static_cast<std::size_t>(t - k)].delta_size);
      rec.aggregate_rhs = lambda_prev * zmax + s.margins.m_a +
                          detail::what_norm_sum(model, g_true, s.norm, w_prev, rec.v, v_prev, false);
      rec.gamma = detail::next_gamma(trace.steps, T, lambda_prev, trace.eta_hat + s.margins.m_a);
    }
    rec.x_envelope = rec.row_sum * detail::max_window(trace.steps, T, rec.gamma, &StepRecord::gamma) + s.noise_bound;

    rec.w = dist.w(t, rec.delta);
    check_disturbance(model, rec.w, s.eta, s.norm);
    y_prev = y;
    u_prev = rec.u;
    v_prev = rec.v;
    w_prev = rec.w;
    x = step_plant(model, truth, x, rec.u, rec.w);
    trace.steps.push_back(std::move(rec));
  }
  trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return trace;
}

// ---------------------------------------------------------------------------
// Distributed localized adaptive robust control loop

inline SimulationTrace run_algorithm2(const Scenario& s, const SimulationOptions& opt = {}) {
  s.validate();
  const auto wall0 = std::chrono::steady_clock::now();
  const auto& model = s.model;
  const auto& topo = s.topology;
  const int N = model.n_nodes;
  const int n = model.total_state();
  const int m = model.total_input();
  const int T = s.horizon_T;
  SimulationTrace trace;
  trace.algorithm = Algorithm::Dlar;
  trace.scenario = s;
  const double max_A = detail::max_vertex_norm_A(model, s.prior, s.norm);
  const double eta_obs = detail::observation_eta(s, max_A);
  trace.eta_hat = effective_disturbance_bound(s.eta, s.noise_bound, max_A);
  trace.drive = aggregate_drive(topo, s.margins.m1, s.margins.m2);
  const auto truth = assemble(model, s.true_alpha);
  const auto g_true = global_matrices(model, truth);
  detail::Disturbances dist{s, opt, std::mt19937_64(s.seed)};

  MessageBus bus;
  std::vector<HalfspacePolytope> P(static_cast<std::size_t>(N), s.prior);
  std::vector<std::vector<LinearConstraintSet>> mailbox(static_cast<std::size_t>(N));
  std::vector<NodeController> ctrl;
  for (int j = 0; j < N; ++j) ctrl.emplace_back(model, topo, j, T);
  std::vector<Response> col(static_cast<std::size_t>(N));
  std::vector<double> lambda(static_cast<std::size_t>(N), lp::kInf), rate(static_cast<std::size_t>(N), lp::kInf);
  std::vector<std::vector<Eigen::VectorXd>> own_delta(static_cast<std::size_t>(N));  // [i][t]

  auto handle = [&](std::vector<Message> msgs) {
    for (auto& msg : msgs) {
      if (auto* c = std::get_if<ConstraintShare>(&msg.payload)) {
        mailbox[static_cast<std::size_t>(msg.to)].push_back(std::move(c->constraints));
      } else if (auto* b = std::get_if<BlockShare>(&msg.payload)) {
        ctrl[static_cast<std::size_t>(msg.to)].receive_blocks(msg.from, msg.stamp, std::move(b->R), std::move(b->M));
      } else if (auto* d = std::get_if<DeltaShare>(&msg.payload)) {
        ctrl[static_cast<std::size_t>(msg.to)].receive_delta(msg.from, d->time, std::move(d->delta));
      }
    }
  };

  Eigen::VectorXd x = s.x0;
  Eigen::VectorXd y_prev, u_prev, v_prev = Eigen::VectorXd::Zero(n), w_prev = Eigen::VectorXd::Zero(n);
  for (int t = 0; t <= s.steps; ++t) {
    StepRecord rec;
    rec.t = t;
    rec.x = x;
    rec.v = dist.v(t);
    Eigen::VectorXd y = x + rec.v;

    // Local constraints, broadcast over the send regions (in-neighbor states
    // arrive within one step, so y_{t-1} of the neighbors is available).
    if (t >= 1) {
      const auto cs = detail::observe_all(s, y_prev, u_prev, y, t, eta_obs);
      for (int j = 0; j < N; ++j) {
        mailbox[static_cast<std::size_t>(j)].push_back(cs[static_cast<std::size_t>(j)]);
        for (int r : topo.send_regions[static_cast<std::size_t>(j)])
          if (r != j) bus.send(j, r, t, topo.delay(r, j), ConstraintShare{cs[static_cast<std::size_t>(j)]});
      }
    }
    handle(bus.deliver(t));
    std::vector<VertexList> verts(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
      auto& p = P[static_cast<std::size_t>(i)];
      p = maybe_compact(update_node(i, p, mailbox[static_cast<std::size_t>(i)]));
      mailbox[static_cast<std::size_t>(i)].clear();
      verts[static_cast<std::size_t>(i)] = enumerate_vertices(p);
      rec.truth_contained = rec.truth_contained && p.contains(s.true_alpha, 1e-9);
      if (t % s.snapshot_period == 0) trace.snapshots.push_back({t, i, p});
    }

    const auto lambda_prev = lambda;
    rec.phase.assign(static_cast<std::size_t>(N), -1);
    if (t == 0 || t % s.resynth_period == 0) {
      for (int i = 0; i < N; ++i) {
        SynthesisRequest req;
        req.mode = SynthesisMode::Node;
        req.node = i;
        req.model = &model;
        req.topology = &topo;
        req.vertices = verts[static_cast<std::size_t>(i)];
        req.T = T;
        req.norm = s.norm;
        req.rho = s.rho;
        req.lambda_star = s.lambda_star;
        req.m1 = s.margins.m1[static_cast<std::size_t>(i)];
        req.m2 = s.margins.m2[static_cast<std::size_t>(i)];
        req.cost = s.cost;
        req.dump_prefix = detail::dump_prefix(opt, t, i);
        if (t > 0) {
          req.previous = col[static_cast<std::size_t>(i)];
          const auto& hist = own_delta[static_cast<std::size_t>(i)];
          for (int q = 0; q < T; ++q)
            req.delta_history.push_back(t - 1 - q >= 0 ? hist[static_cast<std::size_t>(t - 1 - q)]
                                                       : Eigen::VectorXd::Zero(model.nx(i)));
          const auto rep = verify_distributed_conditions(
              model, topo, i, *req.previous, req.previous, req.delta_history, req.vertices, s.norm, s.rho,
              rate[static_cast<std::size_t>(i)], lambda[static_cast<std::size_t>(i)], req.m1, req.m2);
          rec.feasibility_violation = std::max(rec.feasibility_violation, std::max(0.0, -rep.worst_slack));
          req.phase2_first = lambda[static_cast<std::size_t>(i)] <= s.lambda_star;
        }
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = two_phase_solve(req);
        rec.synth_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (res.status != SynthesisStatus::Feasible)
          fail(t == 0 ? ErrorKind::InfeasibleAtStart : ErrorKind::RecursiveFeasibilityViolation,
               "node " + std::to_string(i) + " synthesis infeasible at t=" + std::to_string(t));
        col[static_cast<std::size_t>(i)] = res.response;
        lambda[static_cast<std::size_t>(i)] = res.lambda;
        rate[static_cast<std::size_t>(i)] = res.rate;
        rec.phase[static_cast<std::size_t>(i)] = res.phase == SynthesisPhase::Performance ? 1 : 0;
        // Each node in L(i) gets its own rows of the new column.
        for (int r : topo.local_regions[static_cast<std::size_t>(i)]) {
          BlockShare share;
          for (int k = 1; k <= T; ++k) {
            share.R.push_back(res.response.r(k).middleRows(model.state_offset(r), model.nx(r)));
            share.M.push_back(res.response.m(k).middleRows(model.input_offset(r), model.nu(r)));
          }
          bus.send(i, r, t, topo.delay(r, i), std::move(share));
        }
      }
      handle(bus.deliver(t));
    }
    rec.lambda = lambda;

    if (opt.measurement_kick && std::get<1>(*opt.measurement_kick) == t)
      y.segment(model.state_offset(std::get<0>(*opt.measurement_kick)), model.nx(std::get<0>(*opt.measurement_kick)))
          .array() += std::get<2>(*opt.measurement_kick);
    rec.delta = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < N; ++j) {
      const auto d = ctrl[static_cast<std::size_t>(j)].delta_update(t, y.segment(model.state_offset(j), model.nx(j)));
      rec.delta.segment(model.state_offset(j), model.nx(j)) = d;
      own_delta[static_cast<std::size_t>(j)].push_back(d);
      for (int r : topo.local_regions[static_cast<std::size_t>(j)])
        if (r != j) bus.send(j, r, t, topo.delay(r, j), DeltaShare{t, d});
    }
    handle(bus.deliver(t));
    rec.u = Eigen::VectorXd::Zero(m);
    for (int j = 0; j < N; ++j) {
      if (model.nu(j) > 0) rec.u.segment(model.input_offset(j), model.nu(j)) = ctrl[static_cast<std::size_t>(j)].control_output(t);
      ctrl[static_cast<std::size_t>(j)].prune(t);
    }

    rec.mu = block_column_margin(model, g_true.A, g_true.B, col, s.norm);
    // x^j_t = sum_i sum_k Rhat^{j<-i}(k) delta^i_{t+1-k} with the blocks in use at node j.
    rec.row_sum = 0.0;
    for (int j = 0; j < N; ++j) {
      for (int i = 0; i < N; ++i) {
        const int stamp = ctrl[static_cast<std::size_t>(j)].block_stamp(i);
        require(stamp < 0 || stamp <= t - topo.delay(j, i), ErrorKind::CausalityViolation,
                "block used before its delay elapsed");
      }
      const double rs = ctrl[static_cast<std::size_t>(j)].row_norm_sum(s.norm);
      rec.row_sum = s.norm == NormKind::MaxAbs ? std::max(rec.row_sum, rs) : rec.row_sum + rs;
    }
    rec.delta_size = detail::node_norm_sum(model, s.norm, rec.delta);
    double lam_max = 0.0;
    for (double l : lambda_prev) lam_max = std::max(lam_max, l);
    if (t == 0) {
      rec.gamma = rec.delta_size;
      rec.aggregate_rhs = rec.delta_size;
    } else {
      double zmax = 0.0;
      for (int k = 1; k <= T && t - k >= 0; ++k) zmax = std::max(zmax, trace.steps[static_cast<std::size_t>(t - k)].delta_size);
      rec.aggregate_rhs = lam_max * zmax + trace.drive + detail::what_norm_sum(model, g_true, s.norm, w_prev, rec.v, v_prev, true);
      rec.gamma = detail::next_gamma(trace.steps, T, lam_max, trace.drive + N * trace.eta_hat);
    }
    rec.x_envelope = rec.row_sum * detail::max_window(trace.steps, T, rec.gamma, &StepRecord::gamma) + s.noise_bound;

    rec.w = dist.w(t, rec.delta);
    check_disturbance(model, rec.w, s.eta, s.norm);
    y_prev = y;
    u_prev = rec.u;
    v_prev = rec.v;
    w_prev = rec.w;
    x = step_plant(model, truth, x, rec.u, rec.w);
    trace.steps.push_back(std::move(rec));
  }
  trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return trace;
}

inline SimulationTrace run(const Scenario& s, Algorithm a, const SimulationOptions& opt = {}) {
  return a == Algorithm::Central ? run_algorithm1(s, opt) : run_algorithm2(s, opt);
}

}  // namespace slsac
