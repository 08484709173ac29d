#pragma once

// SLS controller implementation: FIR closed-loop maps (R, M), the effective
// disturbance recursion, the residual calculus and the stability bounds.

#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "slsac/errors.hpp"
#include "slsac/model.hpp"
#include "slsac/norm.hpp"
#include "slsac/polytope.hpp"

namespace slsac {

/// FIR response R(1..T), M(1..T). A global response has n columns; the
/// response synthesized by node i holds only the columns of x^i.
struct Response {
  int T = 0;
  std::vector<Eigen::MatrixXd> R;  // R[k-1]: n x c
  std::vector<Eigen::MatrixXd> M;  // M[k-1]: m x c

  int cols() const { return R.empty() ? 0 : static_cast<int>(R[0].cols()); }
  const Eigen::MatrixXd& r(int k) const { return R[static_cast<std::size_t>(k - 1)]; }
  const Eigen::MatrixXd& m(int k) const { return M[static_cast<std::size_t>(k - 1)]; }
};

/// R(1) = [rows of the identity selected by `first_row`], everything else zero.
inline Response identity_response(int n, int m, int T, int first_row = 0, int cols = -1) {
  if (cols < 0) cols = n;
  Response r;
  r.T = T;
  r.R.assign(static_cast<std::size_t>(T), Eigen::MatrixXd::Zero(n, cols));
  r.M.assign(static_cast<std::size_t>(T), Eigen::MatrixXd::Zero(m, cols));
  r.R[0].block(first_row, 0, cols, cols).setIdentity();
  return r;
}

/// Delta_k = R(k+1) - A R(k) - B M(k) for k < T and Delta_T = -A R(T) - B M(T).
inline std::vector<Eigen::MatrixXd> delta_residuals(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                                    const Response& resp) {
  require(A.rows() == A.cols(), ErrorKind::NonSquare, "A must be square");
  require(static_cast<int>(resp.R.size()) == resp.T && static_cast<int>(resp.M.size()) == resp.T,
          ErrorKind::DimensionMismatch, "response length differs from T");
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(resp.T));
  for (int k = 1; k <= resp.T; ++k) {
    require(resp.r(k).rows() == A.cols() && resp.m(k).rows() == B.cols() && B.rows() == A.rows(),
            ErrorKind::DimensionMismatch, "response block shapes");
    Eigen::MatrixXd d = -A * resp.r(k) - B * resp.m(k);
    if (k < resp.T) d += resp.r(k + 1);
    out.push_back(std::move(d));
  }
  return out;
}

/// sum_k ||Delta_k|| in the induced norm.
inline double margin_of(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Response& resp, NormKind norm) {
  double s = 0.0;
  for (const auto& d : delta_residuals(A, B, resp)) s += induced_norm(norm, d);
  return s;
}

/// sum over row blocks j of ||block_j||, for a column response of node i.
inline double block_norm_sum(const StructuredModel& model, NormKind norm, const Eigen::MatrixXd& column) {
  double s = 0.0;
  for (int j = 0; j < model.n_nodes; ++j)
    s += induced_norm(norm, column.middleRows(model.state_offset(j), model.nx(j)));
  return s;
}

// ---------------------------------------------------------------------------
// Central controller state

/// Ring of the last T effective-disturbance vectors (most recent first,
/// zero before the start).
class ControllerState {
 public:
  ControllerState(int T, int n) : T_(T), n_(n) {
    for (int k = 0; k < T; ++k) history_.push_back(Eigen::VectorXd::Zero(n));
  }

  int horizon() const { return T_; }
  /// delta_{t-k}: k = 0 is the latest value.
  const Eigen::VectorXd& delta(int k) const { return history_[static_cast<std::size_t>(k)]; }
  void push(Eigen::VectorXd d) {
    history_.push_front(std::move(d));
    history_.pop_back();
  }

 private:
  int T_;
  int n_;
  std::deque<Eigen::VectorXd> history_;
};

/// delta_t = y_t - sum_{k=1}^{T-1} R(k+1) delta_{t-k}; pushes it into the ring.
inline Eigen::VectorXd delta_update(ControllerState& state, const Eigen::VectorXd& y, const Response& resp) {
  require(y.size() == resp.r(1).rows(), ErrorKind::DimensionMismatch, "measurement length");
  Eigen::VectorXd d = y;
  for (int k = 1; k <= resp.T - 1 && k <= state.horizon() - 1; ++k) d -= resp.r(k + 1) * state.delta(k - 1);
  state.push(d);
  return d;
}

/// u_t = sum_{k=0}^{T-1} M(k+1) delta_{t-k}; delta_t must already be pushed.
inline Eigen::VectorXd control_output(const ControllerState& state, const Response& resp) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(resp.m(1).rows());
  for (int k = 0; k <= resp.T - 1 && k < state.horizon(); ++k) u += resp.m(k + 1) * state.delta(k);
  return u;
}

// ---------------------------------------------------------------------------
// Bounds

/// Bound on a positive sequence z_t <= lambda max_{1<=k<=T} z_{t-k} + eta.
/// lambda == 1 uses the limit z0 + t eta.
inline double lemma1_bound(double lambda, int T, double z0, double eta, int t) {
  require(lambda > 0.0, ErrorKind::NonPositiveLambda, "lambda must be positive");
  require(t >= 0 && T >= 1, ErrorKind::Config, "t must be nonnegative and T positive");
  const double lt = std::pow(lambda, t);
  const double geo = std::abs(lambda - 1.0) < 1e-12 ? static_cast<double>(t) : (1.0 - lt) / (1.0 - lambda);
  if (lambda < 1.0) return std::pow(lambda, static_cast<double>(t) / T) * z0 + geo * eta;
  return lt * z0 + geo * eta;
}

struct Theorem1Bounds {
  std::vector<double> gamma;  // gamma_0..gamma_t
  double x_bound = 0.0;
  double u_bound = 0.0;
};

/// gamma from the growth bound driven by eta_hat + m_a, and the induced bounds on x_t and
/// u_t from x_t = sum_{k=1}^T R_t(k) delta_{t+1-k} - v_t. The window of gammas
/// therefore ends at t.
inline Theorem1Bounds theorem1_bounds(const Response& resp, NormKind norm, double lambda, double m_a, double eta_hat,
                                      double x0_norm, int t, double noise_bound = 0.0) {
  Theorem1Bounds b;
  for (int s = 0; s <= t; ++s) b.gamma.push_back(lemma1_bound(lambda, resp.T, x0_norm, eta_hat + m_a, s));
  double gmax = 0.0;
  for (int s = std::max(0, t - resp.T + 1); s <= t; ++s) gmax = std::max(gmax, b.gamma[static_cast<std::size_t>(s)]);
  double rs = 0.0, ms = 0.0;
  for (int k = 1; k <= resp.T; ++k) {
    rs += induced_norm(norm, resp.r(k));
    ms += induced_norm(norm, resp.m(k));
  }
  b.x_bound = rs * gmax + noise_bound;
  b.u_bound = ms * gmax;
  return b;
}

/// Worst-case size of the measured-disturbance term
/// what_t = (v_t - A v_{t-1}) + w_{t-1}: eta + (1 + max ||A||) * noise_bound.
inline double effective_disturbance_bound(double eta, double noise_bound, double max_A_norm) {
  return eta + (1.0 + max_A_norm) * noise_bound;
}

// ---------------------------------------------------------------------------
// Distributed controller: node j runs on delayed blocks and delayed deltas

/// Node j's view: its own rows of every column response it receives, stamped
/// with the synthesis time, and the deltas it has been sent.
class NodeController {
 public:
  NodeController(const StructuredModel& model, const Topology& topo, int node, int T)
      : model_(&model), topo_(&topo), node_(node), T_(T) {}

  int node() const { return node_; }

  /// Rows of node j taken from column i's response synthesized at `stamp`.
  void receive_blocks(int from, int stamp, std::vector<Eigen::MatrixXd> r_rows, std::vector<Eigen::MatrixXd> m_rows) {
    auto& b = blocks_[from];
    b.stamp = stamp;
    b.R = std::move(r_rows);
    b.M = std::move(m_rows);
  }

  void receive_delta(int from, int time, Eigen::VectorXd delta) { deltas_[from][time] = std::move(delta); }

  /// sum_i sum_k ||Rhat^{j<-i}(k)|| over the blocks in use.
  double row_norm_sum(NormKind norm) const {
    double s = 0.0;
    for (const auto& [from, b] : blocks_)
      for (const auto& blk : b.R) s += induced_norm(norm, blk);
    return s;
  }

  /// Stamp of the blocks currently in use for column `from` (-1 before any arrival).
  int block_stamp(int from) const {
    const auto it = blocks_.find(from);
    return it == blocks_.end() ? -1 : it->second.stamp;
  }

  /// delta^j_t = y^j_t - sum_i sum_{k=1}^{T-1} Rhat^{j<-i}(k+1) delta^i_{t-k}.
  Eigen::VectorXd delta_update(int t, const Eigen::VectorXd& y) {
    require(y.size() == model_->nx(node_), ErrorKind::DimensionMismatch, "node measurement length");
    Eigen::VectorXd d = y;
    for (const auto& [from, b] : blocks_)
      for (int k = 1; k <= T_ - 1; ++k) {
        const auto& blk = b.R[static_cast<std::size_t>(k)];
        if (blk.isZero(0.0)) continue;
        d -= blk * delta_of(from, t - k);
      }
    deltas_[node_][t] = d;
    return d;
  }

  /// u^j_t = sum_i sum_{k=0}^{T-1} Mhat^{j<-i}(k+1) delta^i_{t-k}.
  Eigen::VectorXd control_output(int t) const {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(model_->nu(node_));
    if (u.size() == 0) return u;
    for (const auto& [from, b] : blocks_)
      for (int k = 0; k <= T_ - 1; ++k) {
        const auto& blk = b.M[static_cast<std::size_t>(k)];
        if (blk.isZero(0.0)) continue;
        u += blk * delta_of(from, t - k);
      }
    return u;
  }

  /// Drops deltas older than the horizon.
  void prune(int t) {
    for (auto& [from, hist] : deltas_)
      while (!hist.empty() && hist.begin()->first < t - T_) hist.erase(hist.begin());
  }

 private:
  struct Blocks {
    int stamp = -1;
    std::vector<Eigen::MatrixXd> R;  // [k-1]: nx_j x nx_i
    std::vector<Eigen::MatrixXd> M;  // [k-1]: nu_j x nx_i
  };

  Eigen::VectorXd delta_of(int from, int time) const {
    if (time < 0) return Eigen::VectorXd::Zero(model_->nx(from));
    const auto it = deltas_.find(from);
    if (it != deltas_.end()) {
      const auto jt = it->second.find(time);
      if (jt != it->second.end()) return jt->second;
    }
    fail(ErrorKind::CausalityViolation, "node " + std::to_string(node_) + " needs delta of node " +
                                            std::to_string(from) + " at time " + std::to_string(time) +
                                            " before it arrived");
  }

  const StructuredModel* model_;
  const Topology* topo_;
  int node_;
  int T_;
  std::map<int, Blocks> blocks_;
  std::map<int, std::map<int, Eigen::VectorXd>> deltas_;
};

// ---------------------------------------------------------------------------
// Node-level conditions

/// Delays d_{j<-i} for every j.
inline std::vector<int> delays_from(const Topology& topo, int i) {
  std::vector<int> d(static_cast<std::size_t>(topo.n_nodes()));
  for (int j = 0; j < topo.n_nodes(); ++j) d[static_cast<std::size_t>(j)] = topo.delay(j, i);
  return d;
}

/// sum_j ||Delta^{j<-i}_k|| for k = 1..T of a column response at alpha.
inline std::vector<double> column_block_sums(const StructuredModel& model, const Eigen::VectorXd& alpha,
                                             const Response& col, NormKind norm) {
  const auto g = global_at(model, alpha);
  std::vector<double> out;
  for (const auto& d : delta_residuals(g.A, g.B, col)) out.push_back(block_norm_sum(model, norm, d));
  return out;
}

/// Smallest c with sum_j ||Delta^{j<-i}_k(v)|| <= c rho^{k-1} at every vertex.
inline double tight_rate(const StructuredModel& model, const Response& col, const VertexList& vertices, NormKind norm,
                         double rho) {
  double c = 0.0;
  for (const auto& v : vertices) {
    const auto sums = column_block_sums(model, v, col, norm);
    for (std::size_t k = 0; k < sums.size(); ++k) c = std::max(c, sums[k] / std::pow(rho, static_cast<double>(k)));
  }
  return c;
}

/// lambda_i = c (1 - rho^T) / (1 - rho).
inline double rate_to_lambda(double c, double rho, int T) { return c * (1.0 - std::pow(rho, T)) / (1.0 - rho); }
inline double lambda_to_rate(double lambda, double rho, int T) { return lambda * (1.0 - rho) / (1.0 - std::pow(rho, T)); }

/// Largest block-column sum of Delta over the column responses, summed over k.
/// For scalar nodes this is sum_k ||Delta_k||_1 of the assembled global response.
inline double block_column_margin(const StructuredModel& model, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                  const std::vector<Response>& columns, NormKind norm) {
  const int T = columns.front().T;
  std::vector<double> worst(static_cast<std::size_t>(T), 0.0);
  for (const auto& col : columns) {
    const auto d = delta_residuals(A, B, col);
    for (int k = 0; k < T; ++k)
      worst[static_cast<std::size_t>(k)] = std::max(worst[static_cast<std::size_t>(k)], block_norm_sum(model, norm, d[static_cast<std::size_t>(k)]));
  }
  double s = 0.0;
  for (double w : worst) s += w;
  return s;
}

/// Effect of the change D = col - prev on the future delta error terms, one
/// number per horizon h (maximized over vertices for the plant-dependent part).
struct PieceValues {
  std::vector<double> am;  // h = 1..dbar
  std::vector<double> r;   // h = 0..max(dbar, 1) - 1
};

/// history[q] = delta^i_{s-1-q}.
inline PieceValues adaptation_pieces(const StructuredModel& model, const Topology& topo, int i, const Response& col,
                                     const Response& prev, std::span<const Eigen::VectorXd> history,
                                     const VertexList& vertices, NormKind norm) {
  const int T = col.T;
  const int n = model.total_state();
  const auto d = delays_from(topo, i);
  const int dbar = topo.max_delay_from(i);
  const int nxi = model.nx(i);
  auto hist = [&](int q, bool structurally_zero) -> Eigen::VectorXd {
    if (q < 0) {
      if (!structurally_zero) fail(ErrorKind::CausalityViolation, "response change multiplies a future delta");
      return Eigen::VectorXd::Zero(nxi);
    }
    if (q >= static_cast<int>(history.size())) return Eigen::VectorXd::Zero(nxi);
    return history[static_cast<std::size_t>(q)];
  };
  std::vector<Eigen::MatrixXd> dr, dm;
  for (int k = 1; k <= T; ++k) {
    dr.push_back(col.r(k) - prev.r(k));
    dm.push_back(col.m(k) - prev.m(k));
  }
  auto row_mask = [&](int h) {
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < model.n_nodes; ++j)
      if (d[static_cast<std::size_t>(j)] >= h) mask.segment(model.state_offset(j), model.nx(j)).setOnes();
    return mask;
  };
  auto input_mask = [&](int h) {
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(model.total_input());
    for (int j = 0; j < model.n_nodes; ++j)
      if (d[static_cast<std::size_t>(j)] >= h) mask.segment(model.input_offset(j), model.nu(j)).setOnes();
    return mask;
  };
  auto block_sum = [&](const Eigen::VectorXd& v, const std::vector<int>& nodes) {
    double s = 0.0;
    for (int j : nodes) s += vector_norm(norm, v.segment(model.state_offset(j), model.nx(j)));
    return s;
  };

  PieceValues out;
  std::vector<GlobalSystem> plants;
  if (dbar > 0)
    for (const auto& v : vertices) plants.push_back(global_at(model, v));
  std::vector<int> all(static_cast<std::size_t>(model.n_nodes));
  for (int j = 0; j < model.n_nodes; ++j) all[static_cast<std::size_t>(j)] = j;
  for (int h = 1; h <= dbar; ++h) {
    const Eigen::VectorXd rm = row_mask(h), im = input_mask(h);
    Eigen::VectorXd ar = Eigen::VectorXd::Zero(n), am = Eigen::VectorXd::Zero(model.total_input());
    for (int k = 1; k <= T; ++k) {
      const Eigen::MatrixXd dk = rm.asDiagonal() * dr[static_cast<std::size_t>(k - 1)];
      const Eigen::MatrixXd mk = im.asDiagonal() * dm[static_cast<std::size_t>(k - 1)];
      const auto x = hist(k - h - 1, dk.isZero(0.0) && mk.isZero(0.0));
      ar += dk * x;
      am += mk * x;
    }
    double worst = 0.0;
    for (const auto& g : plants) worst = std::max(worst, block_sum(-(g.A * ar + g.B * am), all));
    out.am.push_back(worst);
  }
  const int n_r = std::max(dbar, 1);
  for (int h = 0; h < n_r; ++h) {
    std::vector<int> nodes;
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < model.n_nodes; ++j) {
      const int dj = d[static_cast<std::size_t>(j)];
      if (h == 0 ? dj == 0 : dj >= h + 1) {
        nodes.push_back(j);
        mask.segment(model.state_offset(j), model.nx(j)).setOnes();
      }
    }
    Eigen::VectorXd ar = Eigen::VectorXd::Zero(n);
    for (int k = 1; k <= T - 1; ++k) {
      const Eigen::MatrixXd dk = mask.asDiagonal() * dr[static_cast<std::size_t>(k)];
      ar += dk * hist(k - h - 1, dk.isZero(0.0));
    }
    out.r.push_back(block_sum(ar, nodes));
  }
  return out;
}

struct ConditionReport {
  bool ok = true;
  double worst_slack = std::numeric_limits<double>::infinity();
};

/// Checks the node conditions for column response `col` of node i: the decay
/// bound at rate c, the lambda identity, and (with a previous response) the
/// adaptation pieces against m1 / dbar and m2.
inline ConditionReport verify_distributed_conditions(const StructuredModel& model, const Topology& topo, int i,
                                                     const Response& col, const std::optional<Response>& prev,
                                                     std::span<const Eigen::VectorXd> history,
                                                     const VertexList& vertices, NormKind norm, double rho, double c,
                                                     double lambda, double m1, double m2, double tol = 1e-7) {
  if (prev) require(static_cast<int>(history.size()) >= col.T, ErrorKind::InsufficientHistory, "delta history shorter than T");
  ConditionReport rep;
  auto note = [&](double slack) {
    rep.worst_slack = std::min(rep.worst_slack, slack);
    if (slack < -tol) rep.ok = false;
  };
  for (const auto& v : vertices) {
    const auto sums = column_block_sums(model, v, col, norm);
    for (std::size_t k = 0; k < sums.size(); ++k) note(c * std::pow(rho, static_cast<double>(k)) - sums[k]);
  }
  note(-std::abs(lambda - rate_to_lambda(c, rho, col.T)));
  if (prev) {
    const auto pieces = adaptation_pieces(model, topo, i, col, *prev, history, vertices, norm);
    const int dbar = topo.max_delay_from(i);
    for (double a : pieces.am) note(m1 / dbar - a);
    for (double r : pieces.r) note(m2 - r);
  }
  return rep;
}

/// sum_j ||delta^j_t|| <= lambda max_k sum_j ||delta^j_{t-k}|| + sum_i (m1_i + n_R m2_i) + sum_j ||what^j_t||.
inline double aggregate_drive(const Topology& topo, const std::vector<double>& m1, const std::vector<double>& m2) {
  double s = 0.0;
  for (int i = 0; i < topo.n_nodes(); ++i)
    s += m1[static_cast<std::size_t>(i)] + std::max(topo.max_delay_from(i), 1) * m2[static_cast<std::size_t>(i)];
  return s;
}

}  // namespace slsac
