#pragma once

// Simplex solvers (dense tableau and bounded dual revised) and the
// linear-program carrier used by every synthesis problem in the toolkit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "slsac/errors.hpp"

namespace slsac::lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Bound {
  double lower = 0.0;
  double upper = kInf;
};

/// min objective·x  s.t.  inequality_normals·x <= inequality_offsets,
///                        equality_normals·x == equality_offsets,
///                        variable_bounds[j].lower <= x_j <= variable_bounds[j].upper.
struct LinearProgram {
  Eigen::VectorXd objective;
  Eigen::MatrixXd inequality_normals;
  Eigen::VectorXd inequality_offsets;
  Eigen::MatrixXd equality_normals;
  Eigen::VectorXd equality_offsets;
  std::vector<Bound> variable_bounds;

  Eigen::Index num_variables() const { return objective.size(); }

  void validate() const {
    const auto n = num_variables();
    require(static_cast<Eigen::Index>(variable_bounds.size()) == n, ErrorKind::DimensionMismatch,
            "variable_bounds size differs from objective size");
    require(inequality_normals.rows() == inequality_offsets.size(), ErrorKind::DimensionMismatch,
            "inequality rows/offsets mismatch");
    require(equality_normals.rows() == equality_offsets.size(), ErrorKind::DimensionMismatch,
            "equality rows/offsets mismatch");
    require(inequality_normals.rows() == 0 || inequality_normals.cols() == n, ErrorKind::DimensionMismatch,
            "inequality column count mismatch");
    require(equality_normals.rows() == 0 || equality_normals.cols() == n, ErrorKind::DimensionMismatch,
            "equality column count mismatch");
    require(objective.allFinite() && inequality_normals.allFinite() && inequality_offsets.allFinite() &&
                equality_normals.allFinite() && equality_offsets.allFinite(),
            ErrorKind::DimensionMismatch, "non-finite coefficient");
  }
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "Optimal";
    case LpStatus::Infeasible: return "Infeasible";
    case LpStatus::Unbounded: return "Unbounded";
  }
  return "?";
}

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  Eigen::VectorXd point;
  double objective_value = 0.0;
  long iterations = 0;
};

enum class SolverMethod {
  Auto,          // dual revised simplex for tall programs, tableau otherwise
  Tableau,       // dense two-phase primal simplex
  DualRevised,   // revised primal simplex on the dual (basis is vars x vars)
};

struct SolverOptions {
  SolverMethod method = SolverMethod::Auto;
  double pivot_tolerance = 1e-9;
  double optimality_tolerance = 1e-9;
  double feasibility_tolerance = 1e-9;
  /// Switch to Bland's rule after bland_factor * (rows + cols) degenerate pivots.
  long bland_factor = 10;
  /// Partial pricing in the dual revised method: a pricing pass scans about
  /// pricing_work * n^2 nonzeros, so scanning never dominates the O(n^2)
  /// basis update (0: always scan everything).
  double pricing_work = 2.0;
  /// Relative size of the random right-hand-side shift that breaks dual
  /// degeneracy in the dual revised method (0: none). Removed before returning.
  double perturbation = 1e-7;
};

/// Largest violation of any constraint or bound of `lp` at `x`.
inline double max_violation(const LinearProgram& lp, const Eigen::VectorXd& x) {
  double worst = 0.0;
  if (lp.inequality_normals.rows() > 0) {
    Eigen::VectorXd r = lp.inequality_normals * x - lp.inequality_offsets;
    worst = std::max(worst, r.maxCoeff());
  }
  if (lp.equality_normals.rows() > 0) {
    Eigen::VectorXd r = lp.equality_normals * x - lp.equality_offsets;
    worst = std::max(worst, r.cwiseAbs().maxCoeff());
  }
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const auto& b = lp.variable_bounds[static_cast<std::size_t>(j)];
    if (std::isfinite(b.lower)) worst = std::max(worst, b.lower - x[j]);
    if (std::isfinite(b.upper)) worst = std::max(worst, x[j] - b.upper);
  }
  return worst;
}

namespace detail {

// Row-major dense tableau. Rows [0, m) are constraints, row m is the phase-1
// objective and row m+1 the phase-2 objective. The last column is the rhs.
class Tableau {
 public:
  Tableau(int rows, int cols) : rows_(rows), width_(cols + 1), data_(static_cast<std::size_t>(rows) * width_, 0.0) {}

  double* row(int r) { return data_.data() + static_cast<std::size_t>(r) * width_; }
  const double* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * width_; }
  double& at(int r, int c) { return row(r)[c]; }
  double at(int r, int c) const { return row(r)[c]; }
  double& rhs(int r) { return row(r)[width_ - 1]; }
  double rhs(int r) const { return row(r)[width_ - 1]; }
  int rows() const { return rows_; }
  int cols() const { return width_ - 1; }

  void pivot(int pr, int pc) {
    double* p = row(pr);
    const double inv = 1.0 / p[pc];
    nz_.clear();
    for (int c = 0; c < width_; ++c) {
      if (p[c] != 0.0) {
        p[c] *= inv;
        nz_.push_back(c);
      }
    }
    p[pc] = 1.0;
    for (int r = 0; r < rows_; ++r) {
      if (r == pr) continue;
      double* q = row(r);
      const double f = q[pc];
      if (f == 0.0) continue;
      for (int c : nz_) q[c] -= f * p[c];
      q[pc] = 0.0;
    }
  }

 private:
  int rows_;
  int width_;
  std::vector<double> data_;
  std::vector<int> nz_;
};

struct ColumnMap {
  int pos = -1;
  int neg = -1;
  double shift = 0.0;
  double sign = 1.0;
};

}  // namespace detail

namespace detail {

/// Dense two-phase primal simplex (no big-M). Dantzig pricing switches to
/// Bland's rule once degenerate pivots exceed the configured budget.
inline LpSolution solve_tableau(const LinearProgram& lp, const SolverOptions& opt) {
  const int n = static_cast<int>(lp.num_variables());
  const int n_ineq = static_cast<int>(lp.inequality_normals.rows());
  const int n_eq = static_cast<int>(lp.equality_normals.rows());

  LpSolution out;
  out.point = Eigen::VectorXd::Zero(n);

  // Substitute every variable by nonnegative standard-form columns.
  std::vector<detail::ColumnMap> map(static_cast<std::size_t>(n));
  std::vector<std::pair<int, double>> upper_rows;  // (column, capacity)
  int nz = 0;
  for (int j = 0; j < n; ++j) {
    const auto& b = lp.variable_bounds[static_cast<std::size_t>(j)];
    auto& cm = map[static_cast<std::size_t>(j)];
    if (b.lower > b.upper) {
      out.status = LpStatus::Infeasible;
      return out;
    }
    if (std::isfinite(b.lower)) {
      cm.pos = nz++;
      cm.shift = b.lower;
      if (std::isfinite(b.upper)) upper_rows.emplace_back(cm.pos, b.upper - b.lower);
    } else if (std::isfinite(b.upper)) {
      cm.pos = nz++;
      cm.shift = b.upper;
      cm.sign = -1.0;
    } else {
      cm.pos = nz++;
      cm.neg = nz++;
    }
  }

  const int n_bound = static_cast<int>(upper_rows.size());
  const int m = n_ineq + n_bound + n_eq;
  const int n_slack = n_ineq + n_bound;

  // Standard-form rows before sign normalization.
  std::vector<double> std_rows(static_cast<std::size_t>(m) * nz, 0.0);
  std::vector<double> std_rhs(static_cast<std::size_t>(m), 0.0);
  auto fill_row = [&](int r, const Eigen::Ref<const Eigen::RowVectorXd>& a, double rhs) {
    double* dst = std_rows.data() + static_cast<std::size_t>(r) * nz;
    for (int j = 0; j < n; ++j) {
      const double v = a[j];
      if (v == 0.0) continue;
      const auto& cm = map[static_cast<std::size_t>(j)];
      rhs -= v * cm.shift;
      dst[cm.pos] += v * cm.sign;
      if (cm.neg >= 0) dst[cm.neg] -= v;
    }
    std_rhs[static_cast<std::size_t>(r)] = rhs;
  };
  for (int i = 0; i < n_ineq; ++i) fill_row(i, lp.inequality_normals.row(i), lp.inequality_offsets[i]);
  for (int i = 0; i < n_bound; ++i) {
    std_rows[static_cast<std::size_t>(n_ineq + i) * nz + upper_rows[static_cast<std::size_t>(i)].first] = 1.0;
    std_rhs[static_cast<std::size_t>(n_ineq + i)] = upper_rows[static_cast<std::size_t>(i)].second;
  }
  for (int i = 0; i < n_eq; ++i) fill_row(n_slack + i, lp.equality_normals.row(i), lp.equality_offsets[i]);

  // Rows whose slack can start basic need no artificial.
  std::vector<int> needs_art;
  for (int r = 0; r < m; ++r) {
    const bool has_slack = r < n_slack;
    if (!has_slack || std_rhs[static_cast<std::size_t>(r)] < 0.0) needs_art.push_back(r);
  }
  const int n_art = static_cast<int>(needs_art.size());
  const int first_slack = nz;
  const int first_art = nz + n_slack;
  const int cols = nz + n_slack + n_art;

  detail::Tableau tab(m + 2, cols);
  const int obj1 = m;
  const int obj2 = m + 1;
  std::vector<int> basis(static_cast<std::size_t>(m), -1);
  {
    int a = 0;
    for (int r = 0; r < m; ++r) {
      const double sgn = std_rhs[static_cast<std::size_t>(r)] < 0.0 ? -1.0 : 1.0;
      double* dst = tab.row(r);
      const double* src = std_rows.data() + static_cast<std::size_t>(r) * nz;
      for (int c = 0; c < nz; ++c) dst[c] = sgn * src[c];
      if (r < n_slack) dst[first_slack + r] = sgn;
      tab.rhs(r) = sgn * std_rhs[static_cast<std::size_t>(r)];
      if (a < n_art && needs_art[static_cast<std::size_t>(a)] == r) {
        dst[first_art + a] = 1.0;
        basis[static_cast<std::size_t>(r)] = first_art + a;
        ++a;
      } else {
        basis[static_cast<std::size_t>(r)] = first_slack + r;
      }
    }
  }
  // Phase-2 costs in standard form; initial basis has zero cost.
  double cost_offset = 0.0;
  for (int j = 0; j < n; ++j) {
    const auto& cm = map[static_cast<std::size_t>(j)];
    const double c = lp.objective[j];
    cost_offset += c * cm.shift;
    tab.at(obj2, cm.pos) += c * cm.sign;
    if (cm.neg >= 0) tab.at(obj2, cm.neg) -= c;
  }
  // Phase-1 reduced costs: minus the sum of artificial rows.
  for (int r : needs_art) {
    const double* src = tab.row(r);
    double* dst = tab.row(obj1);
    for (int c = 0; c < first_art; ++c) dst[c] -= src[c];
    tab.rhs(obj1) -= tab.rhs(r);
  }

  std::vector<char> row_active(static_cast<std::size_t>(m), 1);
  const long degenerate_budget = opt.bland_factor * static_cast<long>(m + cols);
  const long iteration_cap = 50L * (m + cols) + 10000L;

  // Returns false when unbounded.
  auto run_phase = [&](int obj_row, int col_limit) -> bool {
    long degenerate = 0;
    bool bland = false;
    for (long iter = 0;; ++iter) {
      if (iter > iteration_cap) fail(ErrorKind::NumericalBreakdown, "simplex iteration cap exceeded");
      const double* d = tab.row(obj_row);
      int q = -1;
      double best = -opt.optimality_tolerance;
      for (int c = 0; c < col_limit; ++c) {
        if (d[c] < best) {
          q = c;
          if (bland) break;
          best = d[c];
        }
      }
      if (q < 0) return true;

      // Harris two-pass ratio test: bound the step with slightly relaxed rows,
      // then take the largest pivot among rows that block within that bound.
      // Bland mode keeps the exact minimum ratio with the smallest basic index.
      int pr = -1;
      double best_ratio = kInf;
      double best_piv = 0.0;
      if (bland) {
        for (int r = 0; r < m; ++r) {
          if (!row_active[static_cast<std::size_t>(r)]) continue;
          const double a = tab.at(r, q);
          if (a <= opt.pivot_tolerance) continue;
          const double ratio = std::max(tab.rhs(r), 0.0) / a;
          if (pr < 0 || ratio < best_ratio - 1e-12 ||
              (ratio <= best_ratio + 1e-12 && basis[static_cast<std::size_t>(r)] < basis[static_cast<std::size_t>(pr)])) {
            pr = r;
            best_ratio = std::min(best_ratio, ratio);
          }
        }
      } else {
        double theta = kInf;
        for (int r = 0; r < m; ++r) {
          if (!row_active[static_cast<std::size_t>(r)]) continue;
          const double a = tab.at(r, q);
          if (a <= opt.pivot_tolerance) continue;
          theta = std::min(theta, (std::max(tab.rhs(r), 0.0) + opt.feasibility_tolerance) / a);
        }
        for (int r = 0; r < m; ++r) {
          if (!row_active[static_cast<std::size_t>(r)]) continue;
          const double a = tab.at(r, q);
          if (a <= opt.pivot_tolerance) continue;
          const double ratio = std::max(tab.rhs(r), 0.0) / a;
          if (ratio <= theta && a > best_piv) {
            pr = r;
            best_piv = a;
            best_ratio = ratio;
          }
        }
      }
      if (pr < 0) return false;
      if (best_ratio <= 1e-12) {
        if (++degenerate > degenerate_budget) bland = true;
      }
      tab.pivot(pr, q);
      basis[static_cast<std::size_t>(pr)] = q;
      ++out.iterations;
      for (int r = 0; r < m; ++r) {
        if (tab.rhs(r) < 0.0 && tab.rhs(r) > -1e-11) tab.rhs(r) = 0.0;
      }
    }
  };

  double rhs_scale = 1.0;
  for (int r = 0; r < m; ++r) rhs_scale = std::max(rhs_scale, std::abs(tab.rhs(r)));

  if (n_art > 0) {
    run_phase(obj1, first_art);
    const double infeasibility = -tab.rhs(obj1);
    if (infeasibility > opt.feasibility_tolerance * rhs_scale) {
      out.status = LpStatus::Infeasible;
      return out;
    }
    // Drive remaining artificials out of the basis.
    for (int r = 0; r < m; ++r) {
      if (basis[static_cast<std::size_t>(r)] < first_art) continue;
      int q = -1;
      double best = opt.pivot_tolerance;
      const double* row = tab.row(r);
      for (int c = 0; c < first_art; ++c) {
        if (std::abs(row[c]) > best) {
          best = std::abs(row[c]);
          q = c;
        }
      }
      if (q < 0) {
        row_active[static_cast<std::size_t>(r)] = 0;  // redundant equality
      } else {
        tab.pivot(r, q);
        basis[static_cast<std::size_t>(r)] = q;
        ++out.iterations;
      }
    }
  }

  if (!run_phase(obj2, first_art)) {
    out.status = LpStatus::Unbounded;
    return out;
  }

  std::vector<double> z(static_cast<std::size_t>(cols), 0.0);
  for (int r = 0; r < m; ++r) {
    const int b = basis[static_cast<std::size_t>(r)];
    if (b < cols) z[static_cast<std::size_t>(b)] = std::max(tab.rhs(r), 0.0);
  }
  for (int j = 0; j < n; ++j) {
    const auto& cm = map[static_cast<std::size_t>(j)];
    double v = cm.shift + cm.sign * z[static_cast<std::size_t>(cm.pos)];
    if (cm.neg >= 0) v -= z[static_cast<std::size_t>(cm.neg)];
    out.point[j] = v;
  }
  out.status = LpStatus::Optimal;
  out.objective_value = lp.objective.dot(out.point);
  (void)cost_offset;

  const double viol = max_violation(lp, out.point);
  if (viol > 1e-6 * rhs_scale) {
    std::ostringstream os;
    os << "optimal basis violates constraints by " << viol;
    fail(ErrorKind::NumericalBreakdown, os.str());
  }
  return out;
}

/// Revised primal simplex on the dual of `lp`:
///   min h'y + f'z  s.t.  G'y + E'z = -c,  y >= 0, z free,
/// with (G, h) the inequalities plus finite bounds and (E, f) the equalities.
/// The basis is num_variables square, which keeps tall programs cheap; the
/// primal point is read off the simplex multipliers. Returns nullopt when the
/// dual is infeasible (primal infeasible or unbounded) or the numerics are
/// doubtful, and the caller falls back to the tableau.
inline std::optional<LpSolution> solve_dual_revised(const LinearProgram& lp, const SolverOptions& opt) {
  const int n = static_cast<int>(lp.num_variables());
  if (n == 0) return std::nullopt;
  Eigen::VectorXd b = -lp.objective;
  std::vector<double> sgn(static_cast<std::size_t>(n), 1.0);
  for (int r = 0; r < n; ++r)
    if (b[r] < 0.0) {
      sgn[static_cast<std::size_t>(r)] = -1.0;
      b[r] = -b[r];
    }
  const Eigen::VectorXd b_true = b;
  const bool perturbed = opt.perturbation > 0.0;
  if (perturbed) {
    std::mt19937_64 rng(0x5eed);
    std::uniform_real_distribution<double> unit(0.5, 1.0);
    for (int r = 0; r < n; ++r) b[r] += opt.perturbation * (1.0 + b[r]) * unit(rng);
  }
  auto unperturbed = [&]() -> std::optional<LpSolution> {
    if (!perturbed) return std::nullopt;
    SolverOptions plain = opt;
    plain.perturbation = 0.0;
    return solve_dual_revised(lp, plain);
  };

  // Compressed columns, one per primal row (two for equalities). Counted and
  // filled column-major so the dense carrier is read contiguously.
  std::vector<int> start{0};
  std::vector<int> index;
  std::vector<double> value;
  std::vector<double> cost;
  auto add_block = [&](const Eigen::MatrixXd& a, const Eigen::VectorXd& rhs, bool twin) {
    const auto rows = a.rows();
    std::vector<int> count(static_cast<std::size_t>(rows), 0);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < rows; ++i)
        if (a(i, j) != 0.0) ++count[static_cast<std::size_t>(i)];
    const std::size_t base = index.size();
    std::vector<std::size_t> fill(static_cast<std::size_t>(rows));
    std::size_t pos = base;
    for (Eigen::Index i = 0; i < rows; ++i) {
      fill[static_cast<std::size_t>(i)] = pos;
      pos += static_cast<std::size_t>(count[static_cast<std::size_t>(i)]);
    }
    index.resize(pos);
    value.resize(pos);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < rows; ++i) {
        const double v = a(i, j);
        if (v == 0.0) continue;
        const std::size_t at = fill[static_cast<std::size_t>(i)]++;
        index[at] = static_cast<int>(j);
        value[at] = v * sgn[static_cast<std::size_t>(j)];
      }
    for (Eigen::Index i = 0; i < rows; ++i) {
      start.push_back(static_cast<int>(fill[static_cast<std::size_t>(i)]));
      cost.push_back(rhs[i]);
    }
    if (!twin) return;
    // Free multipliers of equalities: the negated copy of every column.
    const std::size_t first = start.size() - static_cast<std::size_t>(rows) - 1;
    for (Eigen::Index i = 0; i < rows; ++i) {
      const int b0 = start[first + static_cast<std::size_t>(i)];
      const int b1 = start[first + static_cast<std::size_t>(i) + 1];
      for (int e = b0; e < b1; ++e) {
        index.push_back(index[static_cast<std::size_t>(e)]);
        value.push_back(-value[static_cast<std::size_t>(e)]);
      }
      start.push_back(static_cast<int>(index.size()));
      cost.push_back(-rhs[i]);
    }
  };
  add_block(lp.inequality_normals, lp.inequality_offsets, false);
  add_block(lp.equality_normals, lp.equality_offsets, true);
  for (int j = 0; j < n; ++j) {
    const auto& bd = lp.variable_bounds[static_cast<std::size_t>(j)];
    if (bd.lower > bd.upper) {
      LpSolution out;
      out.point = Eigen::VectorXd::Zero(n);
      return out;
    }
    for (const double side : {-1.0, 1.0}) {
      const double lim = side < 0.0 ? bd.lower : bd.upper;
      if (!std::isfinite(lim)) continue;
      index.push_back(j);
      value.push_back(side * sgn[static_cast<std::size_t>(j)]);
      start.push_back(static_cast<int>(index.size()));
      cost.push_back(side * lim);
    }
  }
  const int m = static_cast<int>(cost.size());
  const int total = m + n;  // artificials follow the real columns

  std::vector<int> head(static_cast<std::size_t>(n));
  std::vector<char> basic(static_cast<std::size_t>(total), 0);
  for (int r = 0; r < n; ++r) {
    head[static_cast<std::size_t>(r)] = m + r;
    basic[static_cast<std::size_t>(m + r)] = 1;
  }
  Eigen::MatrixXd binv = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd xb = b;
  const double b_scale = std::max(1.0, b.cwiseAbs().maxCoeff());

  auto times_binv = [&](int j, Eigen::VectorXd& out) {
    if (j >= m) {
      out = binv.col(j - m);
      return;
    }
    out.setZero(n);
    for (int e = start[static_cast<std::size_t>(j)]; e < start[static_cast<std::size_t>(j) + 1]; ++e)
      out += value[static_cast<std::size_t>(e)] * binv.col(index[static_cast<std::size_t>(e)]);
  };
  auto refactor = [&]() -> bool {
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(n, n);
    for (int r = 0; r < n; ++r) {
      const int j = head[static_cast<std::size_t>(r)];
      if (j >= m) {
        basis(j - m, r) = 1.0;
        continue;
      }
      for (int e = start[static_cast<std::size_t>(j)]; e < start[static_cast<std::size_t>(j) + 1]; ++e)
        basis(index[static_cast<std::size_t>(e)], r) = value[static_cast<std::size_t>(e)];
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(basis);
    binv = lu.inverse();
    xb = binv * b;
    for (Eigen::Index r = 0; r < n; ++r)
      if (xb[r] < 0.0 && xb[r] > -1e-11) xb[r] = 0.0;
    return binv.allFinite();
  };
  auto pivot = [&](int pr, int q, const Eigen::VectorXd& alpha) {
    const double theta = std::max(xb[pr], 0.0) / alpha[pr];
    xb -= theta * alpha;
    xb[pr] = theta;
    const Eigen::RowVectorXd prow = binv.row(pr) / alpha[pr];
    binv.noalias() -= alpha * prow;
    binv.row(pr) = prow;
    basic[static_cast<std::size_t>(head[static_cast<std::size_t>(pr)])] = 0;
    head[static_cast<std::size_t>(pr)] = q;
    basic[static_cast<std::size_t>(q)] = 1;
    for (Eigen::Index r = 0; r < n; ++r)
      if (xb[r] < 0.0 && xb[r] > -1e-11) xb[r] = 0.0;
  };

  LpSolution out;
  out.point = Eigen::VectorXd::Zero(n);
  const long degenerate_budget = opt.bland_factor * static_cast<long>(n + m);
  const long iteration_cap = 50L * (n + m) + 10000L;
  enum class Phase { Done, Unbounded, Breakdown };
  const double pass = opt.pricing_work * static_cast<double>(n) * n;
  const int num_segments =
      opt.pricing_work > 0.0 ? static_cast<int>(std::clamp(static_cast<double>(index.size()) / pass, 1.0, 64.0)) : 1;
  int cursor = 0;

  // Artificials never re-enter. In phase 2 a basic artificial (redundant row)
  // must stay at zero, so any nonzero entry there blocks immediately.
  auto run = [&](const std::vector<double>& c, bool phase2) -> Phase {
    long degenerate = 0;
    bool bland = false;
    int since_refactor = 0;
    int stalled = 0;  // consecutive degenerate pivots; past n, price everything
    Eigen::VectorXd cb(n), pi(n), alpha(n);
    std::vector<double> weight(static_cast<std::size_t>(total), 1.0);
    for (long iter = 0;; ++iter) {
      if (iter > iteration_cap) return Phase::Breakdown;
      for (int r = 0; r < n; ++r) cb[r] = c[static_cast<std::size_t>(head[static_cast<std::size_t>(r)])];
      pi.noalias() = binv.transpose() * cb;
      // Devex when everything is priced anyway; otherwise partial Dantzig
      // pricing: most negative reduced cost within the first segment
      // (cyclically from the cursor) that has one. Bland scans all.
      int q = -1;
      double best = -opt.optimality_tolerance;
      const bool full = bland || stalled > n;
      const int segments = full ? 1 : num_segments;
      const bool devex = !bland && num_segments == 1;
      double best_score = -1.0;
      for (int sgi = 0; sgi < segments && q < 0; ++sgi) {
        const int seg = full ? 0 : (cursor + sgi) % num_segments;
        const int lo = full ? 0 : static_cast<int>(static_cast<long>(m) * seg / num_segments);
        const int hi = full ? m : static_cast<int>(static_cast<long>(m) * (seg + 1) / num_segments);
        for (int j = lo; j < hi; ++j) {
          if (basic[static_cast<std::size_t>(j)]) continue;
          double d = c[static_cast<std::size_t>(j)];
          for (int e = start[static_cast<std::size_t>(j)]; e < start[static_cast<std::size_t>(j) + 1]; ++e)
            d -= pi[index[static_cast<std::size_t>(e)]] * value[static_cast<std::size_t>(e)];
          if (d >= -opt.optimality_tolerance) continue;
          if (devex) {
            const double score = d * d / weight[static_cast<std::size_t>(j)];
            if (score > best_score) {
              q = j;
              best_score = score;
            }
          } else if (d < best) {
            q = j;
            if (bland) break;
            best = d;
          }
        }
        if (q >= 0 && !full) cursor = (seg + 1) % num_segments;
      }
      if (q < 0) {
        // Confirm optimality on a freshly factored basis.
        if (since_refactor == 0) return Phase::Done;
        since_refactor = 0;
        if (!refactor()) return Phase::Breakdown;
        continue;
      }
      times_binv(q, alpha);

      int pr = -1;
      double best_ratio = kInf;
      if (phase2) {
        for (int r = 0; r < n && pr < 0; ++r)
          if (head[static_cast<std::size_t>(r)] >= m && std::abs(alpha[r]) > opt.pivot_tolerance) pr = r;
        if (pr >= 0) {
          // Degenerate exchange that removes the artificial; sign of alpha is irrelevant at level zero.
          xb[pr] = 0.0;
          best_ratio = 0.0;
        }
      }
      if (pr < 0 && bland) {
        for (int r = 0; r < n; ++r) {
          if (alpha[r] <= opt.pivot_tolerance) continue;
          const double ratio = std::max(xb[r], 0.0) / alpha[r];
          if (pr < 0 || ratio < best_ratio - 1e-12 ||
              (ratio <= best_ratio + 1e-12 && head[static_cast<std::size_t>(r)] < head[static_cast<std::size_t>(pr)])) {
            pr = r;
            best_ratio = std::min(best_ratio, ratio);
          }
        }
      } else if (pr < 0) {
        double theta = kInf;
        for (int r = 0; r < n; ++r)
          if (alpha[r] > opt.pivot_tolerance)
            theta = std::min(theta, (std::max(xb[r], 0.0) + opt.feasibility_tolerance) / alpha[r]);
        double best_piv = 0.0;
        for (int r = 0; r < n; ++r) {
          if (alpha[r] <= opt.pivot_tolerance) continue;
          const double ratio = std::max(xb[r], 0.0) / alpha[r];
          if (ratio <= theta && alpha[r] > best_piv) {
            pr = r;
            best_piv = alpha[r];
            best_ratio = ratio;
          }
        }
      }
      if (pr < 0) return Phase::Unbounded;
      if (best_ratio <= 1e-12) {
        ++stalled;
        if (++degenerate > degenerate_budget) bland = true;
      } else {
        stalled = 0;
      }
      if (std::abs(alpha[pr]) <= opt.pivot_tolerance) return Phase::Breakdown;
      if (devex) {
        // Reference weights from the pivot row, before the basis changes.
        const Eigen::VectorXd rho = binv.row(pr).transpose() / alpha[pr];
        const double wq = weight[static_cast<std::size_t>(q)];
        double wmax = 0.0;
        for (int j = 0; j < m; ++j) {
          if (basic[static_cast<std::size_t>(j)] || j == q) continue;
          double a = 0.0;
          for (int e = start[static_cast<std::size_t>(j)]; e < start[static_cast<std::size_t>(j) + 1]; ++e)
            a += rho[index[static_cast<std::size_t>(e)]] * value[static_cast<std::size_t>(e)];
          if (a != 0.0) weight[static_cast<std::size_t>(j)] = std::max(weight[static_cast<std::size_t>(j)], a * a * wq);
          wmax = std::max(wmax, weight[static_cast<std::size_t>(j)]);
        }
        const int leaving = head[static_cast<std::size_t>(pr)];
        weight[static_cast<std::size_t>(leaving)] = std::max(wq / (alpha[pr] * alpha[pr]), 1.0);
        // Fresh reference framework once the weights lose meaning.
        if (wmax > 1e12) std::fill(weight.begin(), weight.end(), 1.0);
      }
      pivot(pr, q, alpha);
      ++out.iterations;
      if (++since_refactor >= std::max(100, n / 2)) {
        since_refactor = 0;
        if (!refactor()) return Phase::Breakdown;
      }
    }
  };

  std::vector<double> c1(static_cast<std::size_t>(total), 0.0);
  for (int r = 0; r < n; ++r) c1[static_cast<std::size_t>(m + r)] = 1.0;
  if (run(c1, false) != Phase::Done || !refactor()) return unperturbed();
  double infeasibility = 0.0;
  for (int r = 0; r < n; ++r)
    if (head[static_cast<std::size_t>(r)] >= m) infeasibility += std::max(xb[r], 0.0);
  if (infeasibility > opt.feasibility_tolerance * b_scale) return unperturbed();

  std::vector<double> c2(static_cast<std::size_t>(total), 0.0);
  std::copy(cost.begin(), cost.end(), c2.begin());
  const Phase p2 = run(c2, true);
  if (p2 == Phase::Breakdown) return unperturbed();
  if (p2 == Phase::Unbounded) {
    out.status = LpStatus::Infeasible;  // dual feasible and unbounded
    return out;
  }
  // The shift only moves the dual values; the basis must stay feasible without it.
  b = b_true;
  if (!refactor()) return unperturbed();
  if (perturbed) {
    for (int r = 0; r < n; ++r)
      if (xb[r] < -opt.feasibility_tolerance * b_scale ||
          (head[static_cast<std::size_t>(r)] >= m && std::abs(xb[r]) > opt.feasibility_tolerance * b_scale))
        return unperturbed();
  }
  Eigen::VectorXd cb(n);
  for (int r = 0; r < n; ++r) cb[r] = c2[static_cast<std::size_t>(head[static_cast<std::size_t>(r)])];
  const Eigen::VectorXd pi = binv.transpose() * cb;
  for (int j = 0; j < n; ++j) out.point[j] = sgn[static_cast<std::size_t>(j)] * pi[j];
  out.status = LpStatus::Optimal;
  out.objective_value = lp.objective.dot(out.point);
  return out;
}

}  // namespace detail

/// Solves `lp`. Infeasible/Unbounded are reported through the status; an
/// optimal point that fails the feasibility check throws NumericalBreakdown.
inline LpSolution solve(const LinearProgram& lp, const SolverOptions& opt = {}) {
  lp.validate();
  const auto n = lp.num_variables();
  SolverMethod method = opt.method;
  if (method == SolverMethod::Auto) {
    Eigen::Index rows = lp.inequality_normals.rows() + 2 * lp.equality_normals.rows();
    for (const auto& bd : lp.variable_bounds) rows += std::isfinite(bd.lower) + std::isfinite(bd.upper);
    method = rows >= 2 * n && rows * n >= 20000 ? SolverMethod::DualRevised : SolverMethod::Tableau;
  }
  if (method == SolverMethod::DualRevised) {
    if (auto sol = detail::solve_dual_revised(lp, opt)) {
      if (sol->status != LpStatus::Optimal) return *sol;
      double scale = 1.0;
      if (lp.inequality_offsets.size() > 0) scale = std::max(scale, lp.inequality_offsets.cwiseAbs().maxCoeff());
      if (lp.equality_offsets.size() > 0) scale = std::max(scale, lp.equality_offsets.cwiseAbs().maxCoeff());
      if (max_violation(lp, sol->point) <= 1e-7 * scale) return *sol;
    }
  }
  return detail::solve_tableau(lp, opt);
}

// ---------------------------------------------------------------------------
// Sparse model building

/// Sparse affine expression  constant + sum coef * x[var].
struct AffineExpr {
  std::vector<std::pair<int, double>> terms;
  double constant = 0.0;

  AffineExpr() = default;
  explicit AffineExpr(double c) : constant(c) {}

  static AffineExpr variable(int var, double coef = 1.0) {
    AffineExpr e;
    e.terms.emplace_back(var, coef);
    return e;
  }

  AffineExpr& add(int var, double coef) {
    if (coef != 0.0) terms.emplace_back(var, coef);
    return *this;
  }
  AffineExpr& add(const AffineExpr& other, double scale = 1.0) {
    if (scale == 0.0) return *this;
    for (const auto& [v, c] : other.terms) terms.emplace_back(v, c * scale);
    constant += scale * other.constant;
    return *this;
  }
  AffineExpr& operator+=(const AffineExpr& other) { return add(other, 1.0); }
  AffineExpr& operator-=(const AffineExpr& other) { return add(other, -1.0); }

  AffineExpr scaled(double s) const {
    AffineExpr e;
    e.add(*this, s);
    return e;
  }

  double evaluate(const Eigen::VectorXd& x) const {
    double v = constant;
    for (const auto& [var, c] : terms) v += c * x[var];
    return v;
  }

  bool is_constant() const {
    for (const auto& t : terms)
      if (t.second != 0.0) return false;
    return true;
  }
};

inline AffineExpr operator-(const AffineExpr& a, const AffineExpr& b) {
  AffineExpr e = a;
  e -= b;
  return e;
}
inline AffineExpr operator+(const AffineExpr& a, const AffineExpr& b) {
  AffineExpr e = a;
  e += b;
  return e;
}

/// Incrementally assembles a LinearProgram from sparse rows.
class LpBuilder {
 public:
  int add_variable(double lower = -kInf, double upper = kInf, double cost = 0.0) {
    bounds_.push_back({lower, upper});
    costs_.push_back(cost);
    return static_cast<int>(bounds_.size()) - 1;
  }

  int num_variables() const { return static_cast<int>(bounds_.size()); }
  int num_inequalities() const { return static_cast<int>(ineq_.size()); }
  int num_equalities() const { return static_cast<int>(eq_.size()); }

  void set_cost(int var, double cost) { costs_[static_cast<std::size_t>(var)] = cost; }
  void set_bounds(int var, double lower, double upper) { bounds_[static_cast<std::size_t>(var)] = {lower, upper}; }
  const Bound& bounds(int var) const { return bounds_[static_cast<std::size_t>(var)]; }

  /// lhs <= rhs
  void add_less_equal(const AffineExpr& lhs, const AffineExpr& rhs = AffineExpr{}) {
    ineq_.push_back(lhs - rhs);
  }
  /// lhs == rhs
  void add_equal(const AffineExpr& lhs, const AffineExpr& rhs = AffineExpr{}) { eq_.push_back(lhs - rhs); }

  LinearProgram build() const {
    LinearProgram lp;
    const auto n = static_cast<Eigen::Index>(bounds_.size());
    lp.objective = Eigen::Map<const Eigen::VectorXd>(costs_.data(), n);
    lp.variable_bounds = bounds_;
    auto densify = [n](const std::vector<AffineExpr>& rows, Eigen::MatrixXd& a, Eigen::VectorXd& b) {
      a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), n);
      b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (const auto& [v, c] : rows[i].terms) a(static_cast<Eigen::Index>(i), v) += c;
        b[static_cast<Eigen::Index>(i)] = -rows[i].constant;
      }
    };
    densify(ineq_, lp.inequality_normals, lp.inequality_offsets);
    densify(eq_, lp.equality_normals, lp.equality_offsets);
    return lp;
  }

 private:
  std::vector<Bound> bounds_;
  std::vector<double> costs_;
  std::vector<AffineExpr> ineq_;
  std::vector<AffineExpr> eq_;
};

// ---------------------------------------------------------------------------
// Text dump for debugging

inline void write_text(std::ostream& os, const LinearProgram& lp) {
  auto num = [](double v) -> std::string {
    if (v == kInf) return "inf";
    if (v == -kInf) return "-inf";
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  };
  os << "lp " << lp.num_variables() << ' ' << lp.inequality_normals.rows() << ' ' << lp.equality_normals.rows()
     << '\n';
  os << "objective";
  for (Eigen::Index j = 0; j < lp.objective.size(); ++j) os << ' ' << num(lp.objective[j]);
  os << '\n';
  for (const auto& b : lp.variable_bounds) os << "bound " << num(b.lower) << ' ' << num(b.upper) << '\n';
  for (Eigen::Index i = 0; i < lp.inequality_normals.rows(); ++i) {
    os << "le";
    for (Eigen::Index j = 0; j < lp.inequality_normals.cols(); ++j) os << ' ' << num(lp.inequality_normals(i, j));
    os << " | " << num(lp.inequality_offsets[i]) << '\n';
  }
  for (Eigen::Index i = 0; i < lp.equality_normals.rows(); ++i) {
    os << "eq";
    for (Eigen::Index j = 0; j < lp.equality_normals.cols(); ++j) os << ' ' << num(lp.equality_normals(i, j));
    os << " | " << num(lp.equality_offsets[i]) << '\n';
  }
}

/// Inverse of write_text.
inline LinearProgram read_text(std::istream& is) {
  auto num = [](const std::string& t) -> double {
    if (t == "inf") return kInf;
    if (t == "-inf") return -kInf;
    try {
      return std::stod(t);
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "bad number '" + t + "' in LP text");
    }
  };
  std::string tag;
  Eigen::Index n = 0, n_le = 0, n_eq = 0;
  require(static_cast<bool>(is >> tag >> n >> n_le >> n_eq) && tag == "lp", ErrorKind::Config, "LP text header");
  LinearProgram lp;
  lp.objective.resize(n);
  lp.inequality_normals.resize(n_le, n);
  lp.inequality_offsets.resize(n_le);
  lp.equality_normals.resize(n_eq, n);
  lp.equality_offsets.resize(n_eq);
  std::string t;
  require(static_cast<bool>(is >> tag) && tag == "objective", ErrorKind::Config, "LP text objective");
  for (Eigen::Index j = 0; j < n; ++j) {
    is >> t;
    lp.objective[j] = num(t);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    std::string lo, hi;
    require(static_cast<bool>(is >> tag >> lo >> hi) && tag == "bound", ErrorKind::Config, "LP text bound");
    lp.variable_bounds.push_back({num(lo), num(hi)});
  }
  auto rows = [&](const char* want, Eigen::MatrixXd& a, Eigen::VectorXd& b) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      require(static_cast<bool>(is >> tag) && tag == want, ErrorKind::Config, std::string("LP text ") + want + " row");
      for (Eigen::Index j = 0; j < n; ++j) {
        is >> t;
        a(i, j) = num(t);
      }
      require(static_cast<bool>(is >> t) && t == "|", ErrorKind::Config, "LP text row separator");
      is >> t;
      b[i] = num(t);
    }
  };
  rows("le", lp.inequality_normals, lp.inequality_offsets);
  rows("eq", lp.equality_normals, lp.equality_offsets);
  require(static_cast<bool>(is), ErrorKind::Config, "truncated LP text");
  lp.validate();
  return lp;
}

inline std::string to_text(const LinearProgram& lp) {
  std::ostringstream os;
  write_text(os, lp);
  return os.str();
}

}  // namespace slsac::lp
