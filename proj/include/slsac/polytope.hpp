#pragma once

// Halfspace-representation polytopes over the parameter space R^p.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "slsac/errors.hpp"
#include "slsac/lp.hpp"

namespace slsac {

inline constexpr double kFeasTol = 1e-9;
inline constexpr double kVertexDedupTol = 1e-8;
inline constexpr int kMaxPolytopeDim = 12;
inline constexpr int kCompactionPeriod = 25;

using VertexList = std::vector<Eigen::VectorXd>;

/// Rows {alpha : normals * alpha <= offsets} contributed by one observation.
struct LinearConstraintSet {
  Eigen::MatrixXd normals;
  Eigen::VectorXd offsets;
  int origin_node = -1;
  int origin_time = -1;
};

class HalfspacePolytope {
 public:
  HalfspacePolytope() = default;

  /// Rows are stored with unit Euclidean normals; all-zero rows are kept verbatim.
  HalfspacePolytope(const Eigen::MatrixXd& normals, const Eigen::VectorXd& offsets) : dim_(static_cast<int>(normals.cols())) {
    require(normals.rows() == offsets.size(), ErrorKind::DimensionMismatch, "normals/offsets row count");
    require(dim_ > 0, ErrorKind::DimensionMismatch, "polytope dimension must be positive");
    normals_.resize(0, dim_);
    offsets_.resize(0);
    for (Eigen::Index i = 0; i < normals.rows(); ++i) append_row(normals.row(i), offsets[i]);
  }

  static HalfspacePolytope box(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
    require(lower.size() == upper.size(), ErrorKind::DimensionMismatch, "box bounds");
    const auto p = lower.size();
    Eigen::MatrixXd n(2 * p, p);
    Eigen::VectorXd h(2 * p);
    n.setZero();
    for (Eigen::Index i = 0; i < p; ++i) {
      n(2 * i, i) = 1.0;
      h[2 * i] = upper[i];
      n(2 * i + 1, i) = -1.0;
      h[2 * i + 1] = -lower[i];
    }
    return HalfspacePolytope(n, h);
  }

  int dim() const { return dim_; }
  int num_rows() const { return static_cast<int>(offsets_.size()); }
  const Eigen::MatrixXd& normals() const { return normals_; }
  const Eigen::VectorXd& offsets() const { return offsets_; }
  std::uint64_t stamp() const { return stamp_; }
  int intersections_since_compaction() const { return since_compaction_; }

  bool has_vertex_cache() const { return static_cast<bool>(vertices_); }
  const VertexList* cached_vertices() const { return vertices_.get(); }

  bool contains(const Eigen::VectorXd& alpha, double tol = kFeasTol) const {
    require(alpha.size() == dim_, ErrorKind::DimensionMismatch, "membership point dimension");
    if (num_rows() == 0) return true;
    return ((normals_ * alpha - offsets_).array() <= tol).all();
  }

  /// Active-row indices at `x` within `tol`.
  std::vector<int> active_rows(const Eigen::VectorXd& x, double tol = kFeasTol) const {
    std::vector<int> act;
    for (int i = 0; i < num_rows(); ++i)
      if (std::abs(normals_.row(i).dot(x) - offsets_[i]) <= tol) act.push_back(i);
    return act;
  }

 private:
  friend HalfspacePolytope intersect(const HalfspacePolytope&, const LinearConstraintSet&);
  friend HalfspacePolytope remove_redundant(const HalfspacePolytope&);
  friend const VertexList& enumerate_vertices(const HalfspacePolytope&);
  friend HalfspacePolytope with_vertices(const HalfspacePolytope&, VertexList);

  // Returns -1 when dropped, otherwise the index of the row now holding it.
  int append_row(const Eigen::RowVectorXd& a, double b) {
    const double nrm = a.norm();
    Eigen::RowVectorXd unit = a;
    double off = b;
    if (nrm > 1e-14) {
      unit /= nrm;
      off /= nrm;
      for (int i = 0; i < num_rows(); ++i) {
        if (normals_.row(i).dot(unit) > 1.0 - 1e-8) {
          if (off < offsets_[i] - 1e-9) {
            offsets_[i] = off;
            return i;
          }
          return -1;
        }
      }
    } else if (b >= -kFeasTol) {
      return -1;  // vacuous 0 <= b
    }
    normals_.conservativeResize(num_rows() + 1, dim_);
    offsets_.conservativeResize(offsets_.size() + 1);
    normals_.row(num_rows() - 1) = unit;
    offsets_[offsets_.size() - 1] = off;
    return num_rows() - 1;
  }

  int dim_ = 0;
  Eigen::MatrixXd normals_;
  Eigen::VectorXd offsets_;
  std::uint64_t stamp_ = 0;
  int since_compaction_ = 0;
  // Computed once per value, then read-only.
  mutable std::shared_ptr<const VertexList> vertices_;
};

namespace detail {

inline void dedup_append(VertexList& out, const Eigen::VectorXd& v) {
  for (const auto& w : out)
    if ((w - v).norm() <= kVertexDedupTol) return;
  out.push_back(v);
}

// Solves the active system for a vertex in the least-squares sense; returns
// nullopt when the rows do not pin a unique point.
inline std::optional<Eigen::VectorXd> solve_active(const Eigen::MatrixXd& normals, const Eigen::VectorXd& offsets,
                                                   const std::vector<int>& rows, int dim) {
  if (static_cast<int>(rows.size()) < dim) return std::nullopt;
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), dim);
  Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    a.row(static_cast<Eigen::Index>(k)) = normals.row(rows[k]);
    b[static_cast<Eigen::Index>(k)] = offsets[rows[k]];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < dim) return std::nullopt;
  return Eigen::VectorXd(qr.solve(b));
}

inline int rank_of_rows(const Eigen::MatrixXd& normals, const std::vector<int>& rows, int dim) {
  if (rows.empty()) return 0;
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t k = 0; k < rows.size(); ++k) a.row(static_cast<Eigen::Index>(k)) = normals.row(rows[k]);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  return static_cast<int>(qr.rank());
}

// Double-description step: vertices of (P ∩ {a·x <= b}) from the vertices of P.
// `normals`/`offsets` must already include the new row at index `row`.
inline VertexList cut_vertices(const VertexList& verts, const Eigen::MatrixXd& normals, const Eigen::VectorXd& offsets,
                               int row, int dim) {
  const Eigen::RowVectorXd a = normals.row(row);
  const double b = offsets[row];
  std::vector<int> in, out;
  VertexList result;
  std::vector<double> slack(verts.size());
  for (std::size_t k = 0; k < verts.size(); ++k) {
    slack[k] = a.dot(verts[k]) - b;
    if (slack[k] > kFeasTol) {
      out.push_back(static_cast<int>(k));
    } else {
      if (slack[k] < -kFeasTol) in.push_back(static_cast<int>(k));
      result.push_back(verts[k]);
    }
  }
  if (out.empty()) return verts;
  if (result.empty()) return {};

  // Active sets w.r.t. every row except the new one.
  auto active_of = [&](const Eigen::VectorXd& x) {
    std::vector<int> act;
    for (int i = 0; i < normals.rows(); ++i) {
      if (i == row) continue;
      if (std::abs(normals.row(i).dot(x) - offsets[i]) <= 1e-8) act.push_back(i);
    }
    return act;
  };
  std::vector<std::vector<int>> act_in(in.size()), act_out(out.size());
  for (std::size_t k = 0; k < in.size(); ++k) act_in[k] = active_of(verts[static_cast<std::size_t>(in[k])]);
  for (std::size_t k = 0; k < out.size(); ++k) act_out[k] = active_of(verts[static_cast<std::size_t>(out[k])]);

  std::vector<int> common;
  for (std::size_t ii = 0; ii < in.size(); ++ii) {
    for (std::size_t oo = 0; oo < out.size(); ++oo) {
      common.clear();
      std::set_intersection(act_in[ii].begin(), act_in[ii].end(), act_out[oo].begin(), act_out[oo].end(),
                            std::back_inserter(common));
      if (static_cast<int>(common.size()) < dim - 1) continue;
      if (rank_of_rows(normals, common, dim) != dim - 1) continue;
      const auto& u = verts[static_cast<std::size_t>(in[ii])];
      const auto& w = verts[static_cast<std::size_t>(out[oo])];
      const double su = slack[static_cast<std::size_t>(in[ii])];
      const double sw = slack[static_cast<std::size_t>(out[oo])];
      Eigen::VectorXd x = u + (su / (su - sw)) * (w - u);
      common.push_back(row);
      if (auto polished = solve_active(normals, offsets, common, dim)) {
        if ((*polished - x).norm() < 1e-6) x = *polished;
      }
      dedup_append(result, x);
    }
  }
  return result;
}

}  // namespace detail

/// Intersection with the rows of `c`. Near-duplicate rows that are not
/// strictly tighter are dropped. An existing vertex cache is carried forward
/// by incremental double-description cuts; otherwise it is left empty.
inline HalfspacePolytope intersect(const HalfspacePolytope& p, const LinearConstraintSet& c) {
  require(c.normals.cols() == p.dim(), ErrorKind::DimensionMismatch, "constraint column count differs from dim");
  require(c.normals.rows() == c.offsets.size(), ErrorKind::DimensionMismatch, "constraint rows/offsets");
  HalfspacePolytope out = p;
  out.vertices_.reset();
  std::shared_ptr<const VertexList> verts = p.vertices_;
  for (Eigen::Index i = 0; i < c.normals.rows(); ++i) {
    const int idx = out.append_row(c.normals.row(i), c.offsets[i]);
    if (idx < 0 || !verts) continue;
    if (out.normals_.row(idx).norm() < 1e-14) {
      verts = std::make_shared<const VertexList>();  // 0 <= negative: empty
      continue;
    }
    verts = std::make_shared<const VertexList>(
        detail::cut_vertices(*verts, out.normals_, out.offsets_, idx, out.dim()));
  }
  out.vertices_ = verts;
  ++out.stamp_;
  ++out.since_compaction_;
  return out;
}

inline bool membership(const HalfspacePolytope& p, const Eigen::VectorXd& alpha) { return p.contains(alpha); }

namespace detail {

inline lp::LinearProgram bounding_lp(const HalfspacePolytope& p, const std::vector<char>& keep, const Eigen::VectorXd& obj) {
  lp::LinearProgram prog;
  const int d = p.dim();
  int rows = 0;
  for (char k : keep) rows += k ? 1 : 0;
  prog.objective = obj;
  prog.inequality_normals.resize(rows, d);
  prog.inequality_offsets.resize(rows);
  int r = 0;
  for (int i = 0; i < p.num_rows(); ++i) {
    if (!keep[static_cast<std::size_t>(i)]) continue;
    prog.inequality_normals.row(r) = p.normals().row(i);
    prog.inequality_offsets[r] = p.offsets()[i];
    ++r;
  }
  prog.equality_normals.resize(0, d);
  prog.equality_offsets.resize(0);
  prog.variable_bounds.assign(static_cast<std::size_t>(d), {-lp::kInf, lp::kInf});
  return prog;
}

inline void check_bounded_nonempty(const HalfspacePolytope& p) {
  std::vector<char> keep(static_cast<std::size_t>(p.num_rows()), 1);
  for (int j = 0; j < p.dim(); ++j) {
    for (double s : {1.0, -1.0}) {
      Eigen::VectorXd obj = Eigen::VectorXd::Zero(p.dim());
      obj[j] = s;
      const auto sol = lp::solve(bounding_lp(p, keep, obj));
      if (sol.status == lp::LpStatus::Infeasible) fail(ErrorKind::Empty, "polytope is empty");
      if (sol.status == lp::LpStatus::Unbounded) fail(ErrorKind::Unbounded, "coordinate " + std::to_string(j) + " unbounded");
    }
  }
}

// All p-subsets of rows, solve, keep feasible, deduplicate.
inline VertexList combinatorial_vertices(const HalfspacePolytope& p) {
  const int m = p.num_rows();
  const int d = p.dim();
  VertexList out;
  if (m < d) return out;
  std::vector<int> idx(static_cast<std::size_t>(d));
  std::iota(idx.begin(), idx.end(), 0);
  Eigen::MatrixXd a(d, d);
  Eigen::VectorXd b(d);
  while (true) {
    for (int k = 0; k < d; ++k) {
      a.row(k) = p.normals().row(idx[static_cast<std::size_t>(k)]);
      b[k] = p.offsets()[idx[static_cast<std::size_t>(k)]];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    lu.setThreshold(1e-10);
    if (lu.rank() == d) {
      Eigen::VectorXd x = lu.solve(b);
      if (p.contains(x)) dedup_append(out, x);
    }
    int k = d - 1;
    while (k >= 0 && idx[static_cast<std::size_t>(k)] == m - d + k) --k;
    if (k < 0) break;
    ++idx[static_cast<std::size_t>(k)];
    for (int l = k + 1; l < d; ++l) idx[static_cast<std::size_t>(l)] = idx[static_cast<std::size_t>(l - 1)] + 1;
  }
  return out;
}

}  // namespace detail

/// Extreme points of a bounded polytope (cached on first use).
inline const VertexList& enumerate_vertices(const HalfspacePolytope& p) {
  require(p.dim() <= kMaxPolytopeDim, ErrorKind::DimensionTooLarge, "vertex enumeration limited to dim <= 12");
  if (!p.vertices_) {
    detail::check_bounded_nonempty(p);
    p.vertices_ = std::make_shared<const VertexList>(detail::combinatorial_vertices(p));
  }
  if (p.vertices_->empty()) fail(ErrorKind::Empty, "polytope is empty");
  return *p.vertices_;
}

/// Copy of `p` whose vertex cache is replaced by `verts` (used when a set is
/// known to be unchanged, e.g. after redundancy removal).
inline HalfspacePolytope with_vertices(const HalfspacePolytope& p, VertexList verts) {
  HalfspacePolytope out = p;
  out.vertices_ = std::make_shared<const VertexList>(std::move(verts));
  return out;
}

/// Drops every row implied by the remaining rows (checked by LP, in order).
inline HalfspacePolytope remove_redundant(const HalfspacePolytope& p) {
  std::vector<char> keep(static_cast<std::size_t>(p.num_rows()), 1);
  {
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(p.dim());
    if (lp::solve(detail::bounding_lp(p, keep, zero)).status == lp::LpStatus::Infeasible)
      fail(ErrorKind::Empty, "polytope is empty");
  }
  for (int i = 0; i < p.num_rows(); ++i) {
    keep[static_cast<std::size_t>(i)] = 0;
    const Eigen::VectorXd obj = -p.normals().row(i).transpose();
    const auto sol = lp::solve(detail::bounding_lp(p, keep, obj));
    const bool redundant = sol.status == lp::LpStatus::Optimal && -sol.objective_value <= p.offsets()[i] + kFeasTol;
    if (!redundant) keep[static_cast<std::size_t>(i)] = 1;
  }
  HalfspacePolytope out = p;
  int r = 0;
  for (int i = 0; i < p.num_rows(); ++i) {
    if (!keep[static_cast<std::size_t>(i)]) continue;
    out.normals_.row(r) = p.normals_.row(i);
    out.offsets_[r] = p.offsets_[i];
    ++r;
  }
  out.normals_.conservativeResize(r, p.dim());
  out.offsets_.conservativeResize(r);
  out.since_compaction_ = 0;
  return out;
}

/// Runs remove_redundant once kCompactionPeriod intersections have accumulated.
inline HalfspacePolytope maybe_compact(const HalfspacePolytope& p) {
  if (p.intersections_since_compaction() < kCompactionPeriod) return p;
  return remove_redundant(p);
}

/// Center of the largest inscribed ball, taken within the affine hull of the
/// polytope so that flat sets still get a centered point.
inline Eigen::VectorXd chebyshev_center(const HalfspacePolytope& p) {
  const auto& verts = enumerate_vertices(p);
  const int d = p.dim();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& v : verts) mean += v;
  mean /= static_cast<double>(verts.size());
  Eigen::MatrixXd spread(d, static_cast<Eigen::Index>(verts.size()));
  for (std::size_t k = 0; k < verts.size(); ++k) spread.col(static_cast<Eigen::Index>(k)) = verts[k] - mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(spread, Eigen::ComputeFullU);
  int k = 0;
  const double smax = svd.singularValues().size() > 0 ? svd.singularValues()[0] : 0.0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()[i] > 1e-9 * std::max(1.0, smax)) ++k;
  if (k == 0) return mean;
  const Eigen::MatrixXd basis = svd.matrixU().leftCols(k);

  lp::LpBuilder b;
  std::vector<int> y(static_cast<std::size_t>(k));
  for (auto& v : y) v = b.add_variable();
  const int r = b.add_variable(0.0, lp::kInf, -1.0);
  for (int i = 0; i < p.num_rows(); ++i) {
    const Eigen::RowVectorXd proj = p.normals().row(i) * basis;
    const double pn = proj.norm();
    if (pn < 1e-12) continue;
    lp::AffineExpr lhs;
    for (int j = 0; j < k; ++j) lhs.add(y[static_cast<std::size_t>(j)], proj[j]);
    lhs.add(r, pn);
    b.add_less_equal(lhs, lp::AffineExpr(p.offsets()[i] - p.normals().row(i).dot(mean)));
  }
  const auto sol = lp::solve(b.build());
  if (sol.status == lp::LpStatus::Infeasible) fail(ErrorKind::Empty, "chebyshev center of empty polytope");
  if (sol.status == lp::LpStatus::Unbounded) fail(ErrorKind::Unbounded, "chebyshev center of unbounded polytope");
  Eigen::VectorXd yv(k);
  for (int j = 0; j < k; ++j) yv[j] = sol.point[y[static_cast<std::size_t>(j)]];
  return mean + basis * yv;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const HalfspacePolytope& p) {
  nlohmann::json normals = nlohmann::json::array();
  for (int i = 0; i < p.num_rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < p.dim(); ++j) row.push_back(p.normals()(i, j));
    normals.push_back(row);
  }
  nlohmann::json offsets = nlohmann::json::array();
  for (int i = 0; i < p.num_rows(); ++i) offsets.push_back(p.offsets()[i]);
  return {{"normals", normals}, {"offsets", offsets}};
}

inline HalfspacePolytope polytope_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.contains("normals") && j.contains("offsets"), ErrorKind::Config,
          "polytope needs 'normals' and 'offsets'");
  for (const auto& [key, _] : j.items())
    require(key == "normals" || key == "offsets", ErrorKind::Config, "polytope: unknown key '" + key + "'");
  const auto& n = j.at("normals");
  const auto& o = j.at("offsets");
  require(n.is_array() && o.is_array() && n.size() == o.size() && !n.empty(), ErrorKind::Config,
          "polytope: normals/offsets size mismatch");
  const auto dim = n.at(0).size();
  Eigen::MatrixXd a(static_cast<Eigen::Index>(n.size()), static_cast<Eigen::Index>(dim));
  Eigen::VectorXd b(static_cast<Eigen::Index>(o.size()));
  for (std::size_t i = 0; i < n.size(); ++i) {
    require(n[i].size() == dim, ErrorKind::Config, "polytope: ragged normals");
    for (std::size_t k = 0; k < dim; ++k) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = n[i][k].get<double>();
    b[static_cast<Eigen::Index>(i)] = o[i].get<double>();
  }
  return HalfspacePolytope(a, b);
}

}  // namespace slsac
