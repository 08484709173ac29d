#pragma once

// Structured uncertain networked systems: basis matrices, interconnection
// graph, communication topology and the scenario bundle driving a run.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "slsac/errors.hpp"
#include "slsac/norm.hpp"
#include "slsac/polytope.hpp"

namespace slsac {

/// (to, from): `from` is an in-neighbor of `to`, i.e. x^from_t drives x^to_{t+1}.
using EdgeKey = std::pair<int, int>;

struct StructuredModel {
  int n_nodes = 0;
  int p = 0;
  std::vector<int> state_dims;
  std::vector<int> input_dims;
  std::map<EdgeKey, std::vector<Eigen::MatrixXd>> basis_A;  // p matrices per edge
  std::vector<std::vector<Eigen::MatrixXd>> basis_B;        // p matrices per node

  int state_offset(int j) const {
    int off = 0;
    for (int k = 0; k < j; ++k) off += state_dims[static_cast<std::size_t>(k)];
    return off;
  }
  int input_offset(int j) const {
    int off = 0;
    for (int k = 0; k < j; ++k) off += input_dims[static_cast<std::size_t>(k)];
    return off;
  }
  int total_state() const { return state_offset(n_nodes); }
  int total_input() const { return input_offset(n_nodes); }
  int nx(int j) const { return state_dims[static_cast<std::size_t>(j)]; }
  int nu(int j) const { return input_dims[static_cast<std::size_t>(j)]; }

  /// In-neighbors N(j), ascending.
  std::vector<int> neighbors(int j) const {
    std::vector<int> out;
    for (const auto& [key, _] : basis_A)
      if (key.first == j) out.push_back(key.second);
    return out;
  }

  /// Parameters that enter row block j of (A, B).
  std::vector<int> params_of_node(int j) const {
    std::set<int> s;
    for (const auto& [key, mats] : basis_A) {
      if (key.first != j) continue;
      for (int k = 0; k < p; ++k)
        if (!mats[static_cast<std::size_t>(k)].isZero(0.0)) s.insert(k);
    }
    for (int k = 0; k < p; ++k)
      if (!basis_B[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)].isZero(0.0)) s.insert(k);
    return {s.begin(), s.end()};
  }

  void validate() const {
    require(n_nodes > 0, ErrorKind::Config, "model needs at least one node");
    require(p > 0, ErrorKind::Config, "model needs at least one parameter");
    require(static_cast<int>(state_dims.size()) == n_nodes && static_cast<int>(input_dims.size()) == n_nodes,
            ErrorKind::DimensionMismatch, "state_dims/input_dims must have one entry per node");
    for (int j = 0; j < n_nodes; ++j) {
      require(nx(j) > 0, ErrorKind::DimensionMismatch, "state dimension must be positive");
      require(nu(j) >= 0, ErrorKind::DimensionMismatch, "input dimension must be nonnegative");
    }
    for (const auto& [key, mats] : basis_A) {
      const auto [j, i] = key;
      require(j >= 0 && j < n_nodes && i >= 0 && i < n_nodes, ErrorKind::UnknownNode, "edge references unknown node");
      require(static_cast<int>(mats.size()) == p, ErrorKind::DimensionMismatch, "edge basis needs p matrices");
      for (const auto& m : mats)
        require(m.rows() == nx(j) && m.cols() == nx(i), ErrorKind::DimensionMismatch, "edge basis matrix shape");
    }
    require(static_cast<int>(basis_B.size()) == n_nodes, ErrorKind::DimensionMismatch, "basis_B needs one entry per node");
    for (int j = 0; j < n_nodes; ++j) {
      const auto& mats = basis_B[static_cast<std::size_t>(j)];
      require(static_cast<int>(mats.size()) == p, ErrorKind::DimensionMismatch, "input basis needs p matrices");
      for (const auto& m : mats)
        require(m.rows() == nx(j) && m.cols() == nu(j), ErrorKind::DimensionMismatch, "input basis matrix shape");
    }
  }
};

/// Concrete blocks A^{j<-i}, B^j at one parameter value.
struct SystemBlocks {
  std::map<EdgeKey, Eigen::MatrixXd> A;
  std::vector<Eigen::MatrixXd> B;
};

inline SystemBlocks assemble(const StructuredModel& model, const Eigen::VectorXd& alpha) {
  require(alpha.size() == model.p, ErrorKind::DimensionMismatch, "alpha length differs from p");
  SystemBlocks out;
  for (const auto& [key, mats] : model.basis_A) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(mats[0].rows(), mats[0].cols());
    for (int s = 0; s < model.p; ++s) a += alpha[s] * mats[static_cast<std::size_t>(s)];
    out.A.emplace(key, std::move(a));
  }
  out.B.reserve(static_cast<std::size_t>(model.n_nodes));
  for (int j = 0; j < model.n_nodes; ++j) {
    const auto& mats = model.basis_B[static_cast<std::size_t>(j)];
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(model.nx(j), model.nu(j));
    for (int s = 0; s < model.p; ++s) b += alpha[s] * mats[static_cast<std::size_t>(s)];
    out.B.push_back(std::move(b));
  }
  return out;
}

struct GlobalSystem {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
};

inline GlobalSystem global_matrices(const StructuredModel& model, const SystemBlocks& blocks) {
  require(static_cast<int>(blocks.B.size()) == model.n_nodes, ErrorKind::DimensionMismatch, "B block count");
  GlobalSystem g;
  g.A = Eigen::MatrixXd::Zero(model.total_state(), model.total_state());
  g.B = Eigen::MatrixXd::Zero(model.total_state(), model.total_input());
  for (const auto& [key, a] : blocks.A) {
    const auto [j, i] = key;
    require(a.rows() == model.nx(j) && a.cols() == model.nx(i), ErrorKind::DimensionMismatch, "A block shape");
    g.A.block(model.state_offset(j), model.state_offset(i), a.rows(), a.cols()) = a;
  }
  for (int j = 0; j < model.n_nodes; ++j) {
    const auto& b = blocks.B[static_cast<std::size_t>(j)];
    require(b.rows() == model.nx(j) && b.cols() == model.nu(j), ErrorKind::DimensionMismatch, "B block shape");
    if (b.size() > 0) g.B.block(model.state_offset(j), model.input_offset(j), b.rows(), b.cols()) = b;
  }
  return g;
}

inline GlobalSystem global_at(const StructuredModel& model, const Eigen::VectorXd& alpha) {
  return global_matrices(model, assemble(model, alpha));
}

/// Largest eigenvalue magnitude (Eigen's real Schur based eigensolver).
inline double spectral_radius(const Eigen::MatrixXd& a) {
  require(a.rows() == a.cols(), ErrorKind::NonSquare, "spectral radius of a non-square matrix");
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
  require(es.info() == Eigen::Success, ErrorKind::NumericalBreakdown, "eigenvalue iteration did not converge");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Topology

struct Topology {
  Eigen::MatrixXi delays;                      // delays(j, i) = d_{j<-i}
  std::vector<std::vector<int>> send_regions;  // S(i)
  std::vector<std::vector<int>> local_regions; // L(i) subset of S(i)

  int n_nodes() const { return static_cast<int>(delays.rows()); }
  int delay(int to, int from) const { return delays(to, from); }

  /// R(i) = { j : i in S(j) }
  std::vector<std::vector<int>> receive_regions() const {
    std::vector<std::vector<int>> out(static_cast<std::size_t>(n_nodes()));
    for (int j = 0; j < n_nodes(); ++j)
      for (int i : send_regions[static_cast<std::size_t>(j)]) out[static_cast<std::size_t>(i)].push_back(j);
    for (auto& r : out) std::sort(r.begin(), r.end());
    return out;
  }

  bool in_local_region(int i, int j) const {
    const auto& l = local_regions[static_cast<std::size_t>(i)];
    return std::find(l.begin(), l.end(), j) != l.end();
  }

  /// Largest delay from i to any node of its local region.
  int max_delay_from(int i) const {
    int d = 0;
    for (int j : local_regions[static_cast<std::size_t>(i)]) d = std::max(d, delay(j, i));
    return d;
  }

  /// Full-information topology: zero delays, every region is the whole network.
  static Topology full(int n) {
    Topology t;
    t.delays = Eigen::MatrixXi::Zero(n, n);
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) all[static_cast<std::size_t>(k)] = k;
    t.send_regions.assign(static_cast<std::size_t>(n), all);
    t.local_regions.assign(static_cast<std::size_t>(n), all);
    return t;
  }
};

/// Structural checks plus the propagation-speed condition
/// d_{j<-i} <= 1 + d_{k<-i} for every k in N(j). The non-strict form is what the
/// chain example satisfies and what the sparsity argument needs.
inline void validate_topology(const StructuredModel& model, const Topology& topo) {
  const int n = model.n_nodes;
  require(topo.delays.rows() == n && topo.delays.cols() == n, ErrorKind::DimensionMismatch, "delay matrix shape");
  require(static_cast<int>(topo.send_regions.size()) == n && static_cast<int>(topo.local_regions.size()) == n,
          ErrorKind::DimensionMismatch, "region lists need one entry per node");
  for (int j = 0; j < n; ++j) {
    require(topo.delays(j, j) == 0, ErrorKind::AssumptionViolation, "self delay must be zero");
    for (int i = 0; i < n; ++i) require(topo.delays(j, i) >= 0, ErrorKind::Config, "delays must be nonnegative");
  }
  for (int i = 0; i < n; ++i) {
    const auto& s = topo.send_regions[static_cast<std::size_t>(i)];
    const auto& l = topo.local_regions[static_cast<std::size_t>(i)];
    for (int j : s) require(j >= 0 && j < n, ErrorKind::UnknownNode, "send region references unknown node");
    for (int j : l) {
      require(j >= 0 && j < n, ErrorKind::UnknownNode, "local region references unknown node");
      require(std::find(s.begin(), s.end(), j) != s.end(), ErrorKind::AssumptionViolation,
              "local region of node " + std::to_string(i) + " is not inside its send region");
    }
    require(std::find(l.begin(), l.end(), i) != l.end(), ErrorKind::AssumptionViolation,
            "node " + std::to_string(i) + " must belong to its own local region");
  }
  for (int j = 0; j < n; ++j) {
    for (int k : model.neighbors(j)) {
      for (int i = 0; i < n; ++i) {
        if (topo.delays(j, i) > 1 + topo.delays(k, i))
          fail(ErrorKind::AssumptionViolation, "propagation-speed condition fails: d(" + std::to_string(j) + "<-" +
                                                   std::to_string(i) + ") > 1 + d(" + std::to_string(k) + "<-" +
                                                   std::to_string(i) + ")");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Scenario

enum class DisturbanceKind { UniformBox, AdversarialVertex, Zero };

inline std::string to_string(DisturbanceKind k) {
  switch (k) {
    case DisturbanceKind::UniformBox: return "UniformBox";
    case DisturbanceKind::AdversarialVertex: return "AdversarialVertex";
    case DisturbanceKind::Zero: return "Zero";
  }
  return "?";
}

inline DisturbanceKind parse_disturbance(const std::string& s) {
  if (s == "UniformBox") return DisturbanceKind::UniformBox;
  if (s == "AdversarialVertex") return DisturbanceKind::AdversarialVertex;
  if (s == "Zero") return DisturbanceKind::Zero;
  fail(ErrorKind::Config, "unknown disturbance_kind '" + s + "'");
}

struct Margins {
  double m_a = 0.0;
  std::vector<double> m1;  // per node
  std::vector<double> m2;  // per node
};

/// Performance cost f = sum_k ||C R(k) + D M(k)||. For node problems C acts on
/// the column R^i(k) (all rows) and D on M^i(k).
struct CostMatrices {
  Eigen::MatrixXd C;
  Eigen::MatrixXd D;
};

struct Scenario {
  std::string name;
  StructuredModel model;
  Topology topology;
  HalfspacePolytope prior;
  double eta = 0.0;
  double noise_bound = 0.0;
  NormKind norm = NormKind::MaxAbs;
  Eigen::VectorXd true_alpha;
  Eigen::VectorXd x0;
  int horizon_T = 2;
  double rho = 0.7;
  double lambda_star = 0.95;
  Margins margins;
  CostMatrices cost;
  int steps = 200;
  std::uint64_t seed = 1;
  DisturbanceKind disturbance_kind = DisturbanceKind::UniformBox;
  int resynth_period = 1;
  int snapshot_period = 10;

  void validate() const {
    model.validate();
    validate_topology(model, topology);
    require(prior.dim() == model.p, ErrorKind::DimensionMismatch, "prior dimension differs from p");
    require(true_alpha.size() == model.p, ErrorKind::DimensionMismatch, "true_alpha length differs from p");
    require(x0.size() == model.total_state(), ErrorKind::DimensionMismatch, "x0 length differs from total state");
    require(eta >= 0.0, ErrorKind::Config, "eta must be nonnegative");
    require(noise_bound >= 0.0, ErrorKind::Config, "noise_bound must be nonnegative");
    require(rho > 0.0 && rho < 1.0, ErrorKind::Config, "rho must lie in (0, 1)");
    require(horizon_T >= 2, ErrorKind::Config, "horizon_T must be at least 2");
    require(steps >= 0, ErrorKind::Config, "steps must be nonnegative");
    require(resynth_period >= 1, ErrorKind::Config, "resynth_period must be at least 1");
    require(snapshot_period >= 1, ErrorKind::Config, "snapshot_period must be at least 1");
    require(margins.m_a >= 0.0, ErrorKind::Config, "m_a must be nonnegative");
    require(static_cast<int>(margins.m1.size()) == model.n_nodes && static_cast<int>(margins.m2.size()) == model.n_nodes,
            ErrorKind::Config, "m1/m2 need one entry per node");
    for (int i = 0; i < model.n_nodes; ++i)
      require(margins.m1[static_cast<std::size_t>(i)] >= 0.0 && margins.m2[static_cast<std::size_t>(i)] >= 0.0,
              ErrorKind::Config, "m1/m2 must be nonnegative");
    require(cost.C.cols() == model.total_state() && cost.D.cols() == model.total_input() &&
                cost.C.rows() == cost.D.rows(),
            ErrorKind::DimensionMismatch, "cost matrices: C must be q x n and D q x m");
    require(prior.contains(true_alpha, 1e-9), ErrorKind::Config, "true_alpha lies outside the prior");
  }
};

/// C = [I; 0], D = [0; scale * I] stacked over state then input.
inline CostMatrices default_cost(int n, int m, double input_weight = 1.0) {
  CostMatrices c;
  c.C = Eigen::MatrixXd::Zero(n + m, n);
  c.C.topRows(n).setIdentity();
  c.D = Eigen::MatrixXd::Zero(n + m, m);
  c.D.bottomRows(m) = input_weight * Eigen::MatrixXd::Identity(m, m);
  return c;
}

inline Margins default_margins(int n_nodes, double eta) {
  Margins m;
  m.m_a = 0.1 * eta;
  m.m1.assign(static_cast<std::size_t>(n_nodes), 0.05 * eta);
  m.m2.assign(static_cast<std::size_t>(n_nodes), 0.05 * eta);
  return m;
}

/// Scalar chain of n nodes: A^{j<-j} = a2, A^{j<-j-1} = a1, A^{j<-j+1} = a3,
/// with inputs at the nodes listed in `actuated` (one parameter each).
/// Parameters: (a1, a2, a3, b_1, ..., b_r).
inline StructuredModel chain_model(int n, const std::vector<int>& actuated) {
  StructuredModel m;
  m.n_nodes = n;
  m.p = 3 + static_cast<int>(actuated.size());
  m.state_dims.assign(static_cast<std::size_t>(n), 1);
  m.input_dims.assign(static_cast<std::size_t>(n), 0);
  auto unit = [&](int s) {
    std::vector<Eigen::MatrixXd> mats(static_cast<std::size_t>(m.p), Eigen::MatrixXd::Zero(1, 1));
    mats[static_cast<std::size_t>(s)](0, 0) = 1.0;
    return mats;
  };
  for (int j = 0; j < n; ++j) {
    if (j > 0) m.basis_A[{j, j - 1}] = unit(0);
    m.basis_A[{j, j}] = unit(1);
    if (j + 1 < n) m.basis_A[{j, j + 1}] = unit(2);
  }
  m.basis_B.assign(static_cast<std::size_t>(n), {});
  for (int j = 0; j < n; ++j) {
    const auto it = std::find(actuated.begin(), actuated.end(), j);
    m.input_dims[static_cast<std::size_t>(j)] = it == actuated.end() ? 0 : 1;
  }
  for (int j = 0; j < n; ++j) {
    auto& mats = m.basis_B[static_cast<std::size_t>(j)];
    mats.assign(static_cast<std::size_t>(m.p), Eigen::MatrixXd::Zero(1, m.nu(j)));
    const auto it = std::find(actuated.begin(), actuated.end(), j);
    if (it != actuated.end()) mats[static_cast<std::size_t>(3 + (it - actuated.begin()))](0, 0) = 1.0;
  }
  return m;
}

/// Delays |i - j|, regions covering the whole chain.
inline Topology chain_topology(int n) {
  Topology t = Topology::full(n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) t.delays(j, i) = std::abs(i - j);
  return t;
}

/// The five-link chain: scalar nodes, inputs at both ends, entry-wise prior
/// bounds and unit-width disturbance bound 0.5 in the max norm.
inline Scenario chain5_scenario() {
  Scenario s;
  s.name = "chain5";
  s.model = chain_model(5, {0, 4});
  s.topology = chain_topology(5);
  Eigen::VectorXd lo(5), hi(5);
  lo << 0.1, 0.0, 0.1, 0.2, -1.0;
  hi << 0.5, 1.0, 0.5, 1.0, -0.2;
  s.prior = HalfspacePolytope::box(lo, hi);
  s.eta = 0.5;
  s.noise_bound = 0.0;
  s.norm = NormKind::MaxAbs;
  s.true_alpha.resize(5);
  s.true_alpha << 0.3, 0.6, 0.2, 1.0, -1.0;
  s.x0.resize(5);
  s.x0 << 0, 3, 3, 3, 0;
  s.horizon_T = 8;
  s.rho = 0.7;
  s.lambda_star = 0.95;
  // Adaptation margins tuned for this network: they cap how fast the node
  // responses may move, and the library defaults learn too slowly here.
  s.margins = default_margins(5, s.eta);
  s.margins.m_a = 0.25 * s.eta;
  s.margins.m1.assign(5, 0.25 * s.eta);
  s.margins.m2.assign(5, 0.25 * s.eta);
  s.cost = default_cost(5, 2);
  s.steps = 200;
  s.seed = 1;
  return s;
}

/// Point prior {true_alpha}.
inline HalfspacePolytope point_prior(const Eigen::VectorXd& alpha) { return HalfspacePolytope::box(alpha, alpha); }

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& what) {
  require(j.is_array(), ErrorKind::Config, what + ": expected an array of rows");
  if (j.empty()) return Eigen::MatrixXd(0, 0);
  const auto cols = j.at(0).size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    require(j[r].is_array() && j[r].size() == cols, ErrorKind::Config, what + ": ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) {
      require(j[r][c].is_number(), ErrorKind::Config, what + ": non-numeric entry");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j, const std::string& what) {
  require(j.is_array(), ErrorKind::Config, what + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    require(j[k].is_number(), ErrorKind::Config, what + ": non-numeric entry");
    v[static_cast<Eigen::Index>(k)] = j[k].get<double>();
  }
  return v;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v[k]);
  return out;
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  require(j.is_object(), ErrorKind::Config, where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    require(known, ErrorKind::Config, where + ": unknown key '" + key + "'");
  }
}

inline const nlohmann::json& field(const nlohmann::json& j, const char* key, const std::string& where) {
  require(j.contains(key), ErrorKind::Config, where + ": missing field '" + std::string(key) + "'");
  return j.at(key);
}

template <class T>
T get_as(const nlohmann::json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::Config, what + ": wrong type");
  }
}

}  // namespace detail

inline StructuredModel model_from_json(const nlohmann::json& j) {
  using namespace detail;
  reject_unknown(j, {"n_nodes", "p", "state_dims", "input_dims", "edges", "input_basis"}, "model");
  StructuredModel m;
  m.n_nodes = get_as<int>(field(j, "n_nodes", "model"), "model.n_nodes");
  m.p = get_as<int>(field(j, "p", "model"), "model.p");
  m.state_dims = get_as<std::vector<int>>(field(j, "state_dims", "model"), "model.state_dims");
  m.input_dims = get_as<std::vector<int>>(field(j, "input_dims", "model"), "model.input_dims");
  require(static_cast<int>(m.state_dims.size()) == m.n_nodes && static_cast<int>(m.input_dims.size()) == m.n_nodes,
          ErrorKind::Config, "model: state_dims/input_dims length must equal n_nodes");
  for (const auto& e : field(j, "edges", "model")) {
    reject_unknown(e, {"to", "from", "basis"}, "model.edges[]");
    const int to = get_as<int>(field(e, "to", "model.edges[]"), "model.edges[].to");
    const int from = get_as<int>(field(e, "from", "model.edges[]"), "model.edges[].from");
    std::vector<Eigen::MatrixXd> mats;
    for (const auto& b : field(e, "basis", "model.edges[]")) mats.push_back(matrix_from_json(b, "model.edges[].basis"));
    require(!m.basis_A.count({to, from}), ErrorKind::Config, "model: duplicate edge");
    m.basis_A[{to, from}] = std::move(mats);
  }
  m.basis_B.assign(static_cast<std::size_t>(m.n_nodes), {});
  for (int k = 0; k < m.n_nodes; ++k)
    m.basis_B[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(m.p),
                                                  Eigen::MatrixXd::Zero(m.state_dims[static_cast<std::size_t>(k)],
                                                                        m.input_dims[static_cast<std::size_t>(k)]));
  if (j.contains("input_basis")) {
    for (const auto& e : j.at("input_basis")) {
      reject_unknown(e, {"node", "basis"}, "model.input_basis[]");
      const int node = get_as<int>(field(e, "node", "model.input_basis[]"), "model.input_basis[].node");
      require(node >= 0 && node < m.n_nodes, ErrorKind::UnknownNode, "model.input_basis[]: unknown node");
      std::vector<Eigen::MatrixXd> mats;
      for (const auto& b : field(e, "basis", "model.input_basis[]"))
        mats.push_back(matrix_from_json(b, "model.input_basis[].basis"));
      // A 0-column input basis reads back as an empty matrix; restore its shape.
      for (auto& mat : mats)
        if (mat.size() == 0) mat = Eigen::MatrixXd::Zero(m.nx(node), m.nu(node));
      m.basis_B[static_cast<std::size_t>(node)] = std::move(mats);
    }
  }
  m.validate();
  return m;
}

inline nlohmann::json to_json(const StructuredModel& m) {
  using namespace detail;
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [key, mats] : m.basis_A) {
    nlohmann::json basis = nlohmann::json::array();
    for (const auto& b : mats) basis.push_back(matrix_to_json(b));
    edges.push_back({{"to", key.first}, {"from", key.second}, {"basis", basis}});
  }
  nlohmann::json inputs = nlohmann::json::array();
  for (int j = 0; j < m.n_nodes; ++j) {
    if (m.nu(j) == 0) continue;
    nlohmann::json basis = nlohmann::json::array();
    for (const auto& b : m.basis_B[static_cast<std::size_t>(j)]) basis.push_back(matrix_to_json(b));
    inputs.push_back({{"node", j}, {"basis", basis}});
  }
  return {{"n_nodes", m.n_nodes}, {"p", m.p},           {"state_dims", m.state_dims},
          {"input_dims", m.input_dims}, {"edges", edges}, {"input_basis", inputs}};
}

inline Topology topology_from_json(const nlohmann::json& j) {
  using namespace detail;
  reject_unknown(j, {"delays", "send_regions", "local_regions"}, "topology");
  Topology t;
  const auto d = get_as<std::vector<std::vector<int>>>(field(j, "delays", "topology"), "topology.delays");
  t.delays.resize(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(d.size()));
  for (std::size_t r = 0; r < d.size(); ++r) {
    require(d[r].size() == d.size(), ErrorKind::Config, "topology.delays must be square");
    for (std::size_t c = 0; c < d.size(); ++c) t.delays(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = d[r][c];
  }
  t.send_regions = get_as<std::vector<std::vector<int>>>(field(j, "send_regions", "topology"), "topology.send_regions");
  t.local_regions = get_as<std::vector<std::vector<int>>>(field(j, "local_regions", "topology"), "topology.local_regions");
  return t;
}

inline nlohmann::json to_json(const Topology& t) {
  std::vector<std::vector<int>> d(static_cast<std::size_t>(t.n_nodes()));
  for (int r = 0; r < t.n_nodes(); ++r)
    for (int c = 0; c < t.n_nodes(); ++c) d[static_cast<std::size_t>(r)].push_back(t.delays(r, c));
  return {{"delays", d}, {"send_regions", t.send_regions}, {"local_regions", t.local_regions}};
}

inline HalfspacePolytope prior_from_json(const nlohmann::json& j) {
  using namespace detail;
  if (j.is_object() && (j.contains("lower") || j.contains("upper"))) {
    reject_unknown(j, {"lower", "upper"}, "prior");
    return HalfspacePolytope::box(vector_from_json(field(j, "lower", "prior"), "prior.lower"),
                                  vector_from_json(field(j, "upper", "prior"), "prior.upper"));
  }
  return polytope_from_json(j);
}

/// Parses a scenario document. Required: model, topology, prior, eta,
/// true_alpha, x0. Everything else falls back to documented defaults.
inline Scenario scenario_from_json(const nlohmann::json& j) {
  using namespace detail;
  reject_unknown(j,
                 {"name", "model", "topology", "prior", "eta", "noise_bound", "norm", "true_alpha", "x0", "horizon_T",
                  "rho", "lambda_star", "margins", "cost", "steps", "seed", "disturbance_kind", "resynth_period",
                  "snapshot_period"},
                 "scenario");
  Scenario s;
  s.name = j.value("name", std::string("custom"));
  s.model = model_from_json(field(j, "model", "scenario"));
  s.topology = topology_from_json(field(j, "topology", "scenario"));
  s.prior = prior_from_json(field(j, "prior", "scenario"));
  s.eta = get_as<double>(field(j, "eta", "scenario"), "scenario.eta");
  if (j.contains("noise_bound")) s.noise_bound = get_as<double>(j.at("noise_bound"), "scenario.noise_bound");
  if (j.contains("norm")) s.norm = parse_norm(get_as<std::string>(j.at("norm"), "scenario.norm"));
  s.true_alpha = vector_from_json(field(j, "true_alpha", "scenario"), "scenario.true_alpha");
  s.x0 = vector_from_json(field(j, "x0", "scenario"), "scenario.x0");
  if (j.contains("horizon_T")) s.horizon_T = get_as<int>(j.at("horizon_T"), "scenario.horizon_T");
  if (j.contains("rho")) s.rho = get_as<double>(j.at("rho"), "scenario.rho");
  if (j.contains("lambda_star")) s.lambda_star = get_as<double>(j.at("lambda_star"), "scenario.lambda_star");
  s.margins = default_margins(s.model.n_nodes, s.eta);
  if (j.contains("margins")) {
    const auto& mj = j.at("margins");
    reject_unknown(mj, {"m_a", "m1", "m2"}, "scenario.margins");
    if (mj.contains("m_a")) s.margins.m_a = get_as<double>(mj.at("m_a"), "scenario.margins.m_a");
    auto per_node = [&](const char* key, std::vector<double>& dst) {
      if (!mj.contains(key)) return;
      const auto& v = mj.at(key);
      if (v.is_number()) {
        dst.assign(static_cast<std::size_t>(s.model.n_nodes), v.get<double>());
      } else {
        dst = get_as<std::vector<double>>(v, std::string("scenario.margins.") + key);
      }
    };
    per_node("m1", s.margins.m1);
    per_node("m2", s.margins.m2);
  }
  s.cost = default_cost(s.model.total_state(), s.model.total_input());
  if (j.contains("cost")) {
    const auto& cj = j.at("cost");
    reject_unknown(cj, {"C", "D", "input_weight"}, "scenario.cost");
    if (cj.contains("input_weight"))
      s.cost = default_cost(s.model.total_state(), s.model.total_input(),
                            get_as<double>(cj.at("input_weight"), "scenario.cost.input_weight"));
    if (cj.contains("C")) s.cost.C = matrix_from_json(cj.at("C"), "scenario.cost.C");
    if (cj.contains("D")) s.cost.D = matrix_from_json(cj.at("D"), "scenario.cost.D");
  }
  if (j.contains("steps")) s.steps = get_as<int>(j.at("steps"), "scenario.steps");
  if (j.contains("seed")) s.seed = get_as<std::uint64_t>(j.at("seed"), "scenario.seed");
  if (j.contains("disturbance_kind"))
    s.disturbance_kind = parse_disturbance(get_as<std::string>(j.at("disturbance_kind"), "scenario.disturbance_kind"));
  if (j.contains("resynth_period")) s.resynth_period = get_as<int>(j.at("resynth_period"), "scenario.resynth_period");
  if (j.contains("snapshot_period"))
    s.snapshot_period = get_as<int>(j.at("snapshot_period"), "scenario.snapshot_period");
  s.validate();
  return s;
}

inline nlohmann::json to_json(const Scenario& s) {
  using namespace detail;
  return {{"name", s.name},
          {"model", to_json(s.model)},
          {"topology", to_json(s.topology)},
          {"prior", to_json(s.prior)},
          {"eta", s.eta},
          {"noise_bound", s.noise_bound},
          {"norm", to_string(s.norm)},
          {"true_alpha", vector_to_json(s.true_alpha)},
          {"x0", vector_to_json(s.x0)},
          {"horizon_T", s.horizon_T},
          {"rho", s.rho},
          {"lambda_star", s.lambda_star},
          {"margins", {{"m_a", s.margins.m_a}, {"m1", s.margins.m1}, {"m2", s.margins.m2}}},
          {"cost", {{"C", matrix_to_json(s.cost.C)}, {"D", matrix_to_json(s.cost.D)}}},
          {"steps", s.steps},
          {"seed", s.seed},
          {"disturbance_kind", to_string(s.disturbance_kind)},
          {"resynth_period", s.resynth_period},
          {"snapshot_period", s.snapshot_period}};
}

}  // namespace slsac
