#pragma once

// Robust synthesis LPs over polytope vertices: the central problem and the
// per-node localized problem, solved in two phases (margin first, then cost).

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slsac/encode.hpp"
#include "slsac/errors.hpp"
#include "slsac/lp.hpp"
#include "slsac/model.hpp"
#include "slsac/norm.hpp"
#include "slsac/polytope.hpp"
#include "slsac/sls.hpp"

namespace slsac {

enum class SynthesisMode { Central, Node };
enum class SynthesisObjective { Lambda, CostCD };
enum class SynthesisStatus { Feasible, Infeasible };
enum class SynthesisPhase { Robustness, Performance };

inline const char* to_string(SynthesisPhase p) { return p == SynthesisPhase::Robustness ? "Robustness" : "Performance"; }

struct SynthesisRequest {
  SynthesisMode mode = SynthesisMode::Central;
  int node = -1;
  const StructuredModel* model = nullptr;
  const Topology* topology = nullptr;  // node mode only
  VertexList vertices;
  std::optional<Response> previous;
  /// history[q] = delta_{t-1-q}: global for the central problem, x^i-sized for node i.
  std::vector<Eigen::VectorXd> delta_history;
  int T = 2;
  NormKind norm = NormKind::MaxAbs;
  double rho = 0.7;
  double lambda_star = 0.95;
  double m_a = lp::kInf;  // central adaptation margin
  double m1 = lp::kInf;   // node plant-dependent adaptation margin
  double m2 = lp::kInf;   // node plant-independent adaptation margin
  CostMatrices cost;
  /// Attempt the performance LP first. A feasible phase-2 program implies the
  /// phase-1 optimum is within lambda*, so the answer is unchanged; only
  /// phase1_lambda is left unknown (NaN).
  bool phase2_first = false;
  /// Non-empty: every LP is written as `<prefix>_phase<1|2>.lp`.
  std::string dump_prefix;
};

struct SynthesisResult {
  SynthesisStatus status = SynthesisStatus::Infeasible;
  double lambda = lp::kInf;  // tight margin of the returned response
  double rate = lp::kInf;    // node mode: tight c_i
  double phase1_lambda = lp::kInf;
  Response response;
  double objective_value = 0.0;
  SynthesisPhase phase = SynthesisPhase::Robustness;
  int num_variables = 0;
  int num_constraints = 0;
  long iterations = 0;
};

namespace detail {

using lp::AffineExpr;
using lp::AffineMatrix;
using lp::LpBuilder;

/// Decision variables of a (column) response; -1 marks a pinned entry.
struct ResponseVars {
  int T = 0;
  std::vector<Eigen::MatrixXi> R, M;  // [k-1]
  std::vector<Eigen::MatrixXd> R_fixed, M_fixed;

  AffineExpr r(int k, int row, int col) const { return entry(R, R_fixed, k, row, col); }
  AffineExpr m(int k, int row, int col) const { return entry(M, M_fixed, k, row, col); }

  Response extract(const Eigen::VectorXd& x) const {
    Response out;
    out.T = T;
    for (int k = 0; k < T; ++k) {
      out.R.push_back(values(R[static_cast<std::size_t>(k)], R_fixed[static_cast<std::size_t>(k)], x));
      out.M.push_back(values(M[static_cast<std::size_t>(k)], M_fixed[static_cast<std::size_t>(k)], x));
    }
    return out;
  }

  bool free_r(int k, int row) const {
    return k <= T && (R[static_cast<std::size_t>(k - 1)].row(row).array() >= 0).any();
  }

 private:
  static AffineExpr entry(const std::vector<Eigen::MatrixXi>& v, const std::vector<Eigen::MatrixXd>& f, int k, int row,
                          int col) {
    if (k > static_cast<int>(v.size())) return AffineExpr{};
    const int var = v[static_cast<std::size_t>(k - 1)](row, col);
    if (var >= 0) return AffineExpr::variable(var);
    return AffineExpr(f[static_cast<std::size_t>(k - 1)](row, col));
  }
  static Eigen::MatrixXd values(const Eigen::MatrixXi& v, const Eigen::MatrixXd& f, const Eigen::VectorXd& x) {
    Eigen::MatrixXd out = f;
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      for (Eigen::Index c = 0; c < v.cols(); ++c)
        if (v(r, c) >= 0) out(r, c) = x[v(r, c)];
    return out;
  }
};

inline bool is_zero(const AffineExpr& e) { return e.is_constant() && e.constant == 0.0; }

/// Variable e with ||m|| <= e (induced norm; a vector is a single column), or
/// -1 when m is identically zero.
inline int norm_epigraph(LpBuilder& b, NormKind norm, const AffineMatrix& m) {
  bool any = false;
  for (const auto& e : m.entries) any = any || !is_zero(e);
  if (!any) return -1;
  const int e = b.add_variable(0.0, lp::kInf);
  const bool by_row = norm == NormKind::MaxAbs;
  const int outer = by_row ? m.rows : m.cols;
  const int inner = by_row ? m.cols : m.rows;
  for (int o = 0; o < outer; ++o) {
    auto at = [&](int in) -> const AffineExpr& { return by_row ? m(o, in) : m(in, o); };
    if (inner == 1) {
      const auto& x = at(0);
      if (is_zero(x)) continue;
      b.add_less_equal(x, AffineExpr::variable(e));
      b.add_less_equal(x.scaled(-1.0), AffineExpr::variable(e));
      continue;
    }
    AffineExpr sum;
    bool nonzero = false;
    for (int in = 0; in < inner; ++in) {
      if (is_zero(at(in))) continue;
      sum.add(lp::abs_slack(b, at(in)), 1.0);
      nonzero = true;
    }
    if (nonzero) b.add_less_equal(sum, AffineExpr::variable(e));
  }
  return e;
}

/// Linear pieces whose maximum is the induced norm of m: one signed sum per
/// sign pattern of each row (MaxAbs) or column (SumAbs), zero entries skipped.
inline std::vector<AffineExpr> norm_functionals(NormKind norm, const AffineMatrix& m, std::size_t cap) {
  std::vector<AffineExpr> out;
  const bool by_row = norm == NormKind::MaxAbs;
  const int outer = by_row ? m.rows : m.cols;
  const int inner = by_row ? m.cols : m.rows;
  for (int o = 0; o < outer; ++o) {
    std::vector<const AffineExpr*> nz;
    for (int in = 0; in < inner; ++in) {
      const auto& x = by_row ? m(o, in) : m(in, o);
      if (!is_zero(x)) nz.push_back(&x);
    }
    if (nz.empty()) continue;
    if (nz.size() >= 20 || out.size() + (std::size_t{1} << nz.size()) > cap) return {};
    for (std::size_t mask = 0; mask < (std::size_t{1} << nz.size()); ++mask) {
      AffineExpr f;
      for (std::size_t q = 0; q < nz.size(); ++q) f.add(*nz[q], (mask >> q) & 1 ? -1.0 : 1.0);
      out.push_back(std::move(f));
    }
  }
  return out;
}

/// One summand ||X|| of a sum-of-norms bound. Its epigraph variable is created
/// on first use and shared by every bound that mentions the block.
struct NormTerm {
  AffineMatrix block{0, 0};
  bool zero = true;
  std::vector<AffineExpr> functionals;  // empty when too many to expand
  int epigraph = -2;                    // -2: not created yet

  NormTerm() = default;
  NormTerm(NormKind norm, AffineMatrix m, std::size_t cap) : block(std::move(m)) {
    for (const auto& e : block.entries) zero = zero && is_zero(e);
    if (!zero) functionals = norm_functionals(norm, block, cap);
  }
};

/// Variable s >= ||m||, through the sign expansion when it is small enough;
/// -1 when m is identically zero.
inline int bounded_norm_var(LpBuilder& b, NormKind norm, const AffineMatrix& m) {
  const NormTerm term(norm, m, 4096);
  if (term.zero) return -1;
  if (term.functionals.empty()) return norm_epigraph(b, norm, m);
  const int s = b.add_variable(0.0, lp::kInf);
  for (const auto& f : term.functionals) b.add_less_equal(f, AffineExpr::variable(s));
  return s;
}

/// sum_j ||X_j|| <= bound. Expanded into one row per choice of functionals
/// while that stays within `limit` rows (no auxiliary variables), otherwise
/// written through the shared epigraph variables.
inline void add_norm_sum_bound(LpBuilder& b, NormKind norm, const std::vector<NormTerm*>& terms, const AffineExpr& bound,
                               std::size_t limit) {
  std::vector<NormTerm*> live;
  std::size_t product = 1;
  bool expand = true;
  for (auto* t : terms) {
    if (t->zero) continue;
    live.push_back(t);
    if (t->functionals.empty() || product * t->functionals.size() > limit) expand = false;
    if (expand) product *= t->functionals.size();
  }
  if (live.empty()) return;
  if (expand) {
    std::vector<std::size_t> pick(live.size(), 0);
    for (;;) {
      AffineExpr row;
      for (std::size_t q = 0; q < live.size(); ++q) row.add(live[q]->functionals[pick[q]]);
      b.add_less_equal(row, bound);
      std::size_t q = 0;
      while (q < live.size() && ++pick[q] == live[q]->functionals.size()) pick[q++] = 0;
      if (q == live.size()) break;
    }
    return;
  }
  AffineExpr sum;
  for (auto* t : live) {
    if (t->epigraph == -2) t->epigraph = norm_epigraph(b, norm, t->block);
    if (t->epigraph >= 0) sum.add(t->epigraph, 1.0);
  }
  b.add_less_equal(sum, bound);
}

inline constexpr std::size_t kExpansionLimit = 64;

/// Vertices grouped by their projection onto the parameters of each node.
struct VertexGroups {
  std::vector<std::vector<int>> group;               // [v][j]
  std::vector<std::vector<Eigen::VectorXd>> reps;    // [j][g] representative vertex
  std::vector<std::vector<int>> distinct;            // distinct group tuples

  int count(int j) const { return static_cast<int>(reps[static_cast<std::size_t>(j)].size()); }
};

inline VertexGroups group_vertices(const StructuredModel& model, const VertexList& vertices) {
  require(!vertices.empty(), ErrorKind::Empty, "no vertices to synthesize over");
  VertexGroups g;
  g.reps.resize(static_cast<std::size_t>(model.n_nodes));
  std::vector<std::vector<Eigen::VectorXd>> proj(static_cast<std::size_t>(model.n_nodes));
  for (const auto& v : vertices) {
    std::vector<int> row;
    for (int j = 0; j < model.n_nodes; ++j) {
      const auto params = model.params_of_node(j);
      Eigen::VectorXd p(static_cast<Eigen::Index>(params.size()));
      for (std::size_t s = 0; s < params.size(); ++s) p[static_cast<Eigen::Index>(s)] = v[params[s]];
      auto& known = proj[static_cast<std::size_t>(j)];
      int id = -1;
      for (std::size_t q = 0; q < known.size() && id < 0; ++q)
        if ((known[q] - p).cwiseAbs().maxCoeff() <= 1e-12) id = static_cast<int>(q);
      if (id < 0) {
        id = static_cast<int>(known.size());
        known.push_back(p);
        g.reps[static_cast<std::size_t>(j)].push_back(v);
      }
      row.push_back(id);
    }
    g.group.push_back(row);
    bool seen = false;
    for (const auto& d : g.distinct) seen = seen || d == row;
    if (!seen) g.distinct.push_back(row);
  }
  return g;
}

/// history[q] = delta_{t-1-q}; zero outside the stored range.
inline Eigen::VectorXd history_at(const std::vector<Eigen::VectorXd>& history, int q, int size) {
  if (q < 0 || q >= static_cast<int>(history.size())) return Eigen::VectorXd::Zero(size);
  return history[static_cast<std::size_t>(q)];
}

/// sum_k ||C R(k) + D M(k)|| with R, M restricted to `cols` columns.
inline AffineExpr add_cost(LpBuilder& b, NormKind norm, const CostMatrices& cost, const ResponseVars& v, int cols) {
  AffineExpr total;
  const int q = static_cast<int>(cost.C.rows());
  const int n = static_cast<int>(cost.C.cols());
  const int m = static_cast<int>(cost.D.cols());
  for (int k = 1; k <= v.T; ++k) {
    AffineMatrix f(q, cols);
    for (int r = 0; r < q; ++r)
      for (int c = 0; c < cols; ++c) {
        AffineExpr e;
        for (int l = 0; l < n; ++l)
          if (cost.C(r, l) != 0.0) e.add(v.r(k, l, c), cost.C(r, l));
        for (int l = 0; l < m; ++l)
          if (cost.D(r, l) != 0.0) e.add(v.m(k, l, c), cost.D(r, l));
        f(r, c) = e;
      }
    const int s = norm_epigraph(b, norm, f);
    if (s >= 0) total.add(s, 1.0);
  }
  return total;
}

inline void maybe_dump(const SynthesisRequest& req, int phase, const lp::LinearProgram& lp) {
  if (req.dump_prefix.empty()) return;
  std::ofstream os(req.dump_prefix + "_phase" + std::to_string(phase) + ".lp");
  lp::write_text(os, lp);
}

}  // namespace detail

/// Assembled LP together with the map back to a response.
struct BuiltProgram {
  lp::LinearProgram lp;
  detail::ResponseVars vars;
  int margin_var = -1;  // lambda (central) or c_i (node)
};

// ---------------------------------------------------------------------------
// Central problem

inline BuiltProgram build_central(const SynthesisRequest& req, SynthesisObjective objective) {
  using detail::AffineExpr;
  using detail::AffineMatrix;
  require(req.mode == SynthesisMode::Central && req.model, ErrorKind::Config, "central request expected");
  const auto& model = *req.model;
  const int n = model.total_state();
  const int m = model.total_input();
  const int T = req.T;
  require(T >= 1, ErrorKind::Config, "T must be positive");
  detail::LpBuilder b;
  BuiltProgram out;
  auto& v = out.vars;
  v.T = T;
  for (int k = 1; k <= T; ++k) {
    Eigen::MatrixXi rv = Eigen::MatrixXi::Constant(n, n, -1);
    Eigen::MatrixXd rf = Eigen::MatrixXd::Zero(n, n);
    if (k == 1)
      rf.setIdentity();
    else
      for (int c = 0; c < n; ++c)
        for (int r = 0; r < n; ++r) rv(r, c) = b.add_variable();
    Eigen::MatrixXi mv(m, n);
    for (int c = 0; c < n; ++c)
      for (int r = 0; r < m; ++r) mv(r, c) = b.add_variable();
    v.R.push_back(rv);
    v.R_fixed.push_back(rf);
    v.M.push_back(mv);
    v.M_fixed.push_back(Eigen::MatrixXd::Zero(m, n));
  }
  const bool phase1 = objective == SynthesisObjective::Lambda;
  out.margin_var = b.add_variable(0.0, phase1 ? lp::kInf : req.lambda_star, phase1 ? 1.0 : 0.0);

  // Rows of Delta_k owned by node j depend only on node j's parameters, so
  // norms are bounded per (k, node, vertex group) and combined per tuple.
  // MaxAbs: ||Delta_k|| = max_j ||rows_j||, one variable per block.
  // SumAbs: column sums add over nodes, one variable per block column.
  const auto groups = detail::group_vertices(model, req.vertices);
  const bool by_row = req.norm == NormKind::MaxAbs;
  const int per_block = by_row ? 1 : n;
  // part[k-1][j][g][c]: variable bounding the block (or its column c), -1 if identically zero.
  std::vector<std::vector<std::vector<std::vector<int>>>> part(static_cast<std::size_t>(T));
  for (int k = 1; k <= T; ++k) {
    auto& pk = part[static_cast<std::size_t>(k - 1)];
    pk.resize(static_cast<std::size_t>(model.n_nodes));
    for (int j = 0; j < model.n_nodes; ++j) {
      for (int g = 0; g < groups.count(j); ++g) {
        const auto sys = global_at(model, groups.reps[static_cast<std::size_t>(j)][static_cast<std::size_t>(g)]);
        AffineMatrix block(model.nx(j), n);
        for (int rr = 0; rr < model.nx(j); ++rr) {
          const int r = model.state_offset(j) + rr;
          for (int c = 0; c < n; ++c) {
            AffineExpr e = v.r(k + 1, r, c);
            for (int l = 0; l < n; ++l)
              if (sys.A(r, l) != 0.0) e.add(v.r(k, l, c), -sys.A(r, l));
            for (int l = 0; l < m; ++l)
              if (sys.B(r, l) != 0.0) e.add(v.m(k, l, c), -sys.B(r, l));
            block(rr, c) = std::move(e);
          }
        }
        std::vector<int> vars(static_cast<std::size_t>(per_block));
        for (int c = 0; c < per_block; ++c) {
          AffineMatrix piece = block;
          if (!by_row) {
            piece = AffineMatrix(model.nx(j), 1);
            for (int rr = 0; rr < model.nx(j); ++rr) piece(rr, 0) = block(rr, c);
          }
          vars[static_cast<std::size_t>(c)] = detail::bounded_norm_var(b, req.norm, piece);
        }
        pk[static_cast<std::size_t>(j)].push_back(std::move(vars));
      }
    }
  }
  for (const auto& tuple : groups.distinct) {
    AffineExpr total;
    for (int k = 1; k <= T; ++k) {
      const auto& pk = part[static_cast<std::size_t>(k - 1)];
      const int e = b.add_variable(0.0, lp::kInf);
      total.add(e, 1.0);
      for (int c = 0; c < per_block; ++c) {
        AffineExpr sum;
        for (int j = 0; j < model.n_nodes; ++j) {
          const int pv = pk[static_cast<std::size_t>(j)][static_cast<std::size_t>(tuple[static_cast<std::size_t>(j)])]
                           [static_cast<std::size_t>(c)];
          if (pv < 0) continue;
          if (by_row)
            b.add_less_equal(AffineExpr::variable(pv), AffineExpr::variable(e));
          else
            sum.add(pv, 1.0);
        }
        if (!sum.terms.empty()) b.add_less_equal(sum, AffineExpr::variable(e));
      }
    }
    b.add_less_equal(total, AffineExpr::variable(out.margin_var));
  }

  // ||sum_{k=1}^{T-1} (R_{t-1} - R_t)(k+1) delta_{t-k}|| <= m_a
  if (req.previous && std::isfinite(req.m_a)) {
    AffineMatrix a(n, 1);
    for (int k = 1; k <= T - 1; ++k) {
      const auto d = detail::history_at(req.delta_history, k - 1, n);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
          if (d[c] == 0.0) continue;
          a(r, 0).add(v.r(k + 1, r, c), -d[c]);
          a(r, 0).constant += req.previous->r(k + 1)(r, c) * d[c];
        }
    }
    const int e = detail::norm_epigraph(b, req.norm, a);
    if (e >= 0) b.set_bounds(e, 0.0, req.m_a);
  }

  if (!phase1) {
    const auto total = detail::add_cost(b, req.norm, req.cost, v, n);
    for (const auto& [var, coef] : total.terms) b.set_cost(var, coef);
  }
  out.lp = b.build();
  return out;
}

// ---------------------------------------------------------------------------
// Node problem

/// Free-entry counts of node i's column response under the local-region and
/// delay sparsity.
struct SupportCount {
  int r = 0;
  int m = 0;
  int total() const { return r + m; }
};

inline bool free_r_block(const Topology& topo, int i, int j, int k) {
  return topo.in_local_region(i, j) && k >= 2 && k > topo.delay(j, i);
}
inline bool free_m_block(const StructuredModel& model, const Topology& topo, int i, int j, int k) {
  return topo.in_local_region(i, j) && model.nu(j) > 0 && k > topo.delay(j, i);
}

inline SupportCount count_free_support(const StructuredModel& model, const Topology& topo, int i, int T) {
  SupportCount s;
  for (int j = 0; j < model.n_nodes; ++j)
    for (int k = 1; k <= T; ++k) {
      if (free_r_block(topo, i, j, k)) s.r += model.nx(j) * model.nx(i);
      if (free_m_block(model, topo, i, j, k)) s.m += model.nu(j) * model.nx(i);
    }
  return s;
}

inline BuiltProgram build_node(const SynthesisRequest& req, SynthesisObjective objective) {
  using detail::AffineExpr;
  using detail::AffineMatrix;
  require(req.mode == SynthesisMode::Node && req.model && req.topology, ErrorKind::Config, "node request expected");
  const auto& model = *req.model;
  const auto& topo = *req.topology;
  validate_topology(model, topo);
  const int i = req.node;
  require(i >= 0 && i < model.n_nodes, ErrorKind::UnknownNode, "node index out of range");
  const int n = model.total_state();
  const int m = model.total_input();
  const int T = req.T;
  const int nxi = model.nx(i);
  const auto d = delays_from(topo, i);
  const int dbar = topo.max_delay_from(i);

  detail::LpBuilder b;
  BuiltProgram out;
  auto& v = out.vars;
  v.T = T;
  for (int k = 1; k <= T; ++k) {
    Eigen::MatrixXi rv = Eigen::MatrixXi::Constant(n, nxi, -1);
    Eigen::MatrixXd rf = Eigen::MatrixXd::Zero(n, nxi);
    Eigen::MatrixXi mv = Eigen::MatrixXi::Constant(m, nxi, -1);
    if (k == 1) rf.middleRows(model.state_offset(i), nxi).setIdentity();
    for (int j = 0; j < model.n_nodes; ++j) {
      if (free_r_block(topo, i, j, k))
        for (int c = 0; c < nxi; ++c)
          for (int r = 0; r < model.nx(j); ++r) rv(model.state_offset(j) + r, c) = b.add_variable();
      if (free_m_block(model, topo, i, j, k))
        for (int c = 0; c < nxi; ++c)
          for (int r = 0; r < model.nu(j); ++r) mv(model.input_offset(j) + r, c) = b.add_variable();
    }
    v.R.push_back(rv);
    v.R_fixed.push_back(rf);
    v.M.push_back(mv);
    v.M_fixed.push_back(Eigen::MatrixXd::Zero(m, nxi));
  }
  const bool phase1 = objective == SynthesisObjective::Lambda;
  const double to_lambda = rate_to_lambda(1.0, req.rho, T);
  out.margin_var = b.add_variable(0.0, phase1 ? lp::kInf : lambda_to_rate(req.lambda_star, req.rho, T),
                                  phase1 ? to_lambda : 0.0);

  const auto groups = detail::group_vertices(model, req.vertices);
  // Row block j of Delta^{.<-i}_k at each parameter group of node j.
  auto block_of = [&](int j, int g, auto&& entry) {
    const auto sys = assemble(model, groups.reps[static_cast<std::size_t>(j)][static_cast<std::size_t>(g)]);
    return entry(sys);
  };
  std::vector<std::vector<std::vector<detail::NormTerm>>> eps(static_cast<std::size_t>(T));  // [k][j][g]
  for (int k = 1; k <= T; ++k) {
    auto& ek = eps[static_cast<std::size_t>(k - 1)];
    ek.resize(static_cast<std::size_t>(model.n_nodes));
    for (int j = 0; j < model.n_nodes; ++j) {
      const auto nbrs = model.neighbors(j);
      for (int g = 0; g < groups.count(j); ++g) {
        ek[static_cast<std::size_t>(j)].push_back(block_of(j, g, [&](const SystemBlocks& sys) {
          AffineMatrix delta(model.nx(j), nxi);
          for (int r = 0; r < model.nx(j); ++r)
            for (int c = 0; c < nxi; ++c) {
              AffineExpr x = v.r(k + 1, model.state_offset(j) + r, c);
              for (int nb : nbrs) {
                const auto& a = sys.A.at({j, nb});
                for (int l = 0; l < model.nx(nb); ++l)
                  if (a(r, l) != 0.0) x.add(v.r(k, model.state_offset(nb) + l, c), -a(r, l));
              }
              const auto& bj = sys.B[static_cast<std::size_t>(j)];
              for (int l = 0; l < model.nu(j); ++l)
                if (bj(r, l) != 0.0) x.add(v.m(k, model.input_offset(j) + l, c), -bj(r, l));
              delta(r, c) = x;
            }
          return detail::NormTerm(req.norm, std::move(delta), detail::kExpansionLimit);
        }));
      }
    }
  }
  for (const auto& tuple : groups.distinct) {
    for (int k = 1; k <= T; ++k) {
      std::vector<detail::NormTerm*> terms;
      for (int j = 0; j < model.n_nodes; ++j)
        terms.push_back(&eps[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j)][static_cast<std::size_t>(tuple[static_cast<std::size_t>(j)])]);
      detail::add_norm_sum_bound(b, req.norm, terms, AffineExpr::variable(out.margin_var, std::pow(req.rho, k - 1)),
                                 detail::kExpansionLimit);
    }
  }

  // Effect of the change D = (R_t - R_{t-1}, M_t - M_{t-1}) on later delta errors.
  if (req.previous) {
    const auto& prev = *req.previous;
    auto dr = [&](int k, int row, int c) {
      AffineExpr e = v.r(k, row, c);
      if (k <= T) e.constant -= prev.r(k)(row, c);
      return e;
    };
    auto dm = [&](int k, int row, int c) {
      AffineExpr e = v.m(k, row, c);
      e.constant -= prev.m(k)(row, c);
      return e;
    };
    auto hist = [&](int q) { return detail::history_at(req.delta_history, q, nxi); };
    if (dbar > 0 && std::isfinite(req.m1)) {
      for (int h = 1; h <= dbar; ++h) {
        // aR[n] = sum_k DR^{n<-i}(k) delta_{t+h-k} for d_n >= h, aM likewise for inputs.
        std::vector<AffineExpr> ar(static_cast<std::size_t>(n)), am(static_cast<std::size_t>(m));
        for (int k = h + 1; k <= T; ++k) {
          const auto x = hist(k - h - 1);
          for (int j = 0; j < model.n_nodes; ++j) {
            if (d[static_cast<std::size_t>(j)] < h) continue;
            for (int c = 0; c < nxi; ++c) {
              if (x[c] == 0.0) continue;
              for (int r = 0; r < model.nx(j); ++r)
                ar[static_cast<std::size_t>(model.state_offset(j) + r)].add(dr(k, model.state_offset(j) + r, c), x[c]);
              for (int r = 0; r < model.nu(j); ++r)
                am[static_cast<std::size_t>(model.input_offset(j) + r)].add(dm(k, model.input_offset(j) + r, c), x[c]);
            }
          }
        }
        std::vector<std::vector<detail::NormTerm>> ej(static_cast<std::size_t>(model.n_nodes));
        for (int j = 0; j < model.n_nodes; ++j) {
          const auto nbrs = model.neighbors(j);
          for (int g = 0; g < groups.count(j); ++g) {
            ej[static_cast<std::size_t>(j)].push_back(block_of(j, g, [&](const SystemBlocks& sys) {
              AffineMatrix piece(model.nx(j), 1);
              for (int r = 0; r < model.nx(j); ++r) {
                AffineExpr x;
                for (int nb : nbrs) {
                  if (d[static_cast<std::size_t>(nb)] < h) continue;
                  const auto& a = sys.A.at({j, nb});
                  for (int l = 0; l < model.nx(nb); ++l)
                    if (a(r, l) != 0.0) x.add(ar[static_cast<std::size_t>(model.state_offset(nb) + l)], -a(r, l));
                }
                if (d[static_cast<std::size_t>(j)] >= h) {
                  const auto& bj = sys.B[static_cast<std::size_t>(j)];
                  for (int l = 0; l < model.nu(j); ++l)
                    if (bj(r, l) != 0.0) x.add(am[static_cast<std::size_t>(model.input_offset(j) + l)], -bj(r, l));
                }
                piece(r, 0) = x;
              }
              return detail::NormTerm(req.norm, std::move(piece), detail::kExpansionLimit);
            }));
          }
        }
        for (const auto& tuple : groups.distinct) {
          std::vector<detail::NormTerm*> terms;
          for (int j = 0; j < model.n_nodes; ++j)
            terms.push_back(&ej[static_cast<std::size_t>(j)][static_cast<std::size_t>(tuple[static_cast<std::size_t>(j)])]);
          detail::add_norm_sum_bound(b, req.norm, terms, AffineExpr(req.m1 / dbar), detail::kExpansionLimit);
        }
      }
    }
    if (std::isfinite(req.m2)) {
      const int n_r = std::max(dbar, 1);
      for (int h = 0; h < n_r; ++h) {
        AffineExpr sum;
        for (int j = 0; j < model.n_nodes; ++j) {
          const int dj = d[static_cast<std::size_t>(j)];
          if (!(h == 0 ? dj == 0 : dj >= h + 1) || !topo.in_local_region(i, j)) continue;
          AffineMatrix piece(model.nx(j), 1);
          for (int k = std::max(1, h + 1); k <= T - 1; ++k) {
            const auto x = hist(k - h - 1);
            for (int c = 0; c < nxi; ++c) {
              if (x[c] == 0.0) continue;
              for (int r = 0; r < model.nx(j); ++r) piece(r, 0).add(dr(k + 1, model.state_offset(j) + r, c), x[c]);
            }
          }
          const int e = detail::norm_epigraph(b, req.norm, piece);
          if (e >= 0) sum.add(e, 1.0);
        }
        if (!sum.terms.empty()) b.add_less_equal(sum, AffineExpr(req.m2));
      }
    }
  }

  if (!phase1) {
    const auto total = detail::add_cost(b, req.norm, req.cost, v, nxi);
    for (const auto& [var, coef] : total.terms) b.set_cost(var, coef);
  }
  out.lp = b.build();
  return out;
}

// ---------------------------------------------------------------------------
// Two-phase driver

/// Tight margin of a response over the request's vertices.
inline double tight_margin(const SynthesisRequest& req, const Response& resp, double* rate = nullptr) {
  if (req.mode == SynthesisMode::Central) {
    double worst = 0.0;
    for (const auto& v : req.vertices) {
      const auto g = global_at(*req.model, v);
      worst = std::max(worst, margin_of(g.A, g.B, resp, req.norm));
    }
    return worst;
  }
  const double c = tight_rate(*req.model, resp, req.vertices, req.norm, req.rho);
  if (rate) *rate = c;
  return rate_to_lambda(c, req.rho, req.T);
}

inline BuiltProgram build_program(const SynthesisRequest& req, SynthesisObjective objective) {
  return req.mode == SynthesisMode::Central ? build_central(req, objective) : build_node(req, objective);
}

/// Phase 1 minimizes the margin; if it reaches lambda*, phase 2 minimizes the
/// cost subject to lambda <= lambda*.
inline SynthesisResult two_phase_solve(const SynthesisRequest& req) {
  SynthesisResult res;
  if (req.phase2_first) {
    auto p2 = build_program(req, SynthesisObjective::CostCD);
    detail::maybe_dump(req, 2, p2.lp);
    const auto s2 = lp::solve(p2.lp);
    res.iterations = s2.iterations;
    if (s2.status == lp::LpStatus::Optimal) {
      res.num_variables = static_cast<int>(p2.lp.num_variables());
      res.num_constraints = static_cast<int>(p2.lp.inequality_normals.rows() + p2.lp.equality_normals.rows());
      res.status = SynthesisStatus::Feasible;
      res.response = p2.vars.extract(s2.point);
      res.lambda = tight_margin(req, res.response, &res.rate);
      res.phase1_lambda = std::numeric_limits<double>::quiet_NaN();
      res.objective_value = s2.objective_value;
      res.phase = SynthesisPhase::Performance;
      return res;
    }
  }
  const long skipped = res.iterations;
  auto p1 = build_program(req, SynthesisObjective::Lambda);
  detail::maybe_dump(req, 1, p1.lp);
  const auto s1 = lp::solve(p1.lp);
  res.num_variables = static_cast<int>(p1.lp.num_variables());
  res.num_constraints = static_cast<int>(p1.lp.inequality_normals.rows() + p1.lp.equality_normals.rows());
  res.iterations = skipped + s1.iterations;
  if (s1.status != lp::LpStatus::Optimal) return res;
  res.status = SynthesisStatus::Feasible;
  res.response = p1.vars.extract(s1.point);
  res.lambda = tight_margin(req, res.response, &res.rate);
  res.phase1_lambda = res.lambda;
  res.objective_value = s1.objective_value;
  res.phase = SynthesisPhase::Robustness;
  if (res.lambda > req.lambda_star) return res;

  auto p2 = build_program(req, SynthesisObjective::CostCD);
  detail::maybe_dump(req, 2, p2.lp);
  const auto s2 = lp::solve(p2.lp);
  res.iterations += s2.iterations;
  if (s2.status != lp::LpStatus::Optimal) return res;  // keep the phase-1 answer
  res.response = p2.vars.extract(s2.point);
  res.lambda = tight_margin(req, res.response, &res.rate);
  res.objective_value = s2.objective_value;
  res.phase = SynthesisPhase::Performance;
  return res;
}

}  // namespace slsac
