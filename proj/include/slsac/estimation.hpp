#pragma once

// Set-membership estimation: every observed transition x^j_{k-1} -> x^j_k
// must be explained by some alpha with a disturbance inside the eta ball.

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "slsac/errors.hpp"
#include "slsac/model.hpp"
#include "slsac/norm.hpp"
#include "slsac/polytope.hpp"

namespace slsac {

/// Regressors yhat_s = sum_{i in N(j)} A_s^{j<-i} x^i_{k-1} + B_s^j u^j_{k-1}.
struct RegressorBundle {
  int node = -1;
  int time = -1;  // k - 1
  std::vector<Eigen::VectorXd> yhat;
  Eigen::VectorXd observed_next;

  /// Columns are the p regressors.
  Eigen::MatrixXd matrix() const {
    Eigen::MatrixXd y(observed_next.size(), static_cast<Eigen::Index>(yhat.size()));
    for (std::size_t s = 0; s < yhat.size(); ++s) y.col(static_cast<Eigen::Index>(s)) = yhat[s];
    return y;
  }
};

inline RegressorBundle build_regressors(const StructuredModel& model, const Eigen::VectorXd& x_prev,
                                        const Eigen::VectorXd& u_prev, int node, const Eigen::VectorXd& x_next,
                                        int time = -1) {
  require(node >= 0 && node < model.n_nodes, ErrorKind::UnknownNode, "regressors for unknown node");
  require(x_prev.size() == model.total_state() && x_next.size() == model.total_state(), ErrorKind::DimensionMismatch,
          "state vector length");
  require(u_prev.size() == model.total_input(), ErrorKind::DimensionMismatch, "input vector length");
  RegressorBundle b;
  b.node = node;
  b.time = time;
  const int nj = model.nx(node);
  b.yhat.assign(static_cast<std::size_t>(model.p), Eigen::VectorXd::Zero(nj));
  for (int i : model.neighbors(node)) {
    const auto& mats = model.basis_A.at({node, i});
    const auto xi = x_prev.segment(model.state_offset(i), model.nx(i));
    for (int s = 0; s < model.p; ++s) b.yhat[static_cast<std::size_t>(s)] += mats[static_cast<std::size_t>(s)] * xi;
  }
  if (model.nu(node) > 0) {
    const auto uj = u_prev.segment(model.input_offset(node), model.nu(node));
    for (int s = 0; s < model.p; ++s)
      b.yhat[static_cast<std::size_t>(s)] += model.basis_B[static_cast<std::size_t>(node)][static_cast<std::size_t>(s)] * uj;
  }
  b.observed_next = x_next.segment(model.state_offset(node), nj);
  return b;
}

/// ||x - Y alpha|| <= eta as rows in alpha. The max norm gives two rows per
/// state entry; the 1-norm expands over all sign patterns (dim <= 3 only).
inline LinearConstraintSet constraint_from_observation(const RegressorBundle& bundle, double eta, NormKind norm) {
  require(eta >= 0.0, ErrorKind::Config, "eta must be nonnegative");
  const Eigen::MatrixXd y = bundle.matrix();
  const Eigen::VectorXd& x = bundle.observed_next;
  const auto d = x.size();
  const auto p = y.cols();
  LinearConstraintSet c;
  c.origin_node = bundle.node;
  c.origin_time = bundle.time + 1;
  if (norm == NormKind::MaxAbs) {
    c.normals.resize(2 * d, p);
    c.offsets.resize(2 * d);
    for (Eigen::Index r = 0; r < d; ++r) {
      c.normals.row(2 * r) = y.row(r);
      c.offsets[2 * r] = eta + x[r];
      c.normals.row(2 * r + 1) = -y.row(r);
      c.offsets[2 * r + 1] = eta - x[r];
    }
    return c;
  }
  if (d > 3) fail(ErrorKind::UnsupportedNormForDim, "1-norm observation constraints need node dimension <= 3");
  const Eigen::Index patterns = Eigen::Index{1} << d;
  c.normals.resize(patterns, p);
  c.offsets.resize(patterns);
  for (Eigen::Index mask = 0; mask < patterns; ++mask) {
    Eigen::VectorXd sigma(d);
    for (Eigen::Index r = 0; r < d; ++r) sigma[r] = (mask >> r) & 1 ? -1.0 : 1.0;
    // sigma'(x - Y alpha) <= eta
    c.normals.row(mask) = -(sigma.transpose() * y);
    c.offsets[mask] = eta - sigma.dot(x);
  }
  return c;
}

/// P_t = P_{t-1} intersected with every constraint observed at t.
inline HalfspacePolytope update_central(const HalfspacePolytope& p, std::span<const LinearConstraintSet> constraints) {
  HalfspacePolytope out = p;
  for (const auto& c : constraints) out = intersect(out, c);
  return out;
}

/// P^i_t = P^i_{t-1} intersected with the constraints whose delay elapsed this step.
inline HalfspacePolytope update_node(int node, const HalfspacePolytope& p_prev,
                                     std::span<const LinearConstraintSet> mailbox) {
  (void)node;
  HalfspacePolytope out = p_prev;
  for (const auto& c : mailbox) out = intersect(out, c);
  return out;
}

}  // namespace slsac
