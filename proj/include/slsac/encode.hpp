#pragma once

// Epigraph encoders for polytopic vector norms and their induced matrix norms.

#include <span>
#include <vector>

#include "slsac/lp.hpp"
#include "slsac/norm.hpp"

namespace slsac::lp {

/// Dense matrix of affine expressions (row-major).
struct AffineMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<AffineExpr> entries;

  AffineMatrix() = default;
  AffineMatrix(int r, int c) : rows(r), cols(c), entries(static_cast<std::size_t>(r) * c) {}

  AffineExpr& operator()(int r, int c) { return entries[static_cast<std::size_t>(r) * cols + c]; }
  const AffineExpr& operator()(int r, int c) const { return entries[static_cast<std::size_t>(r) * cols + c]; }
};

/// Aux variables introduced by an encoder together with the number of rows added.
struct Encoding {
  std::vector<int> aux_variables;
  int rows_added = 0;
};

/// Adds s >= 0 with  expr <= s  and  -expr <= s. Constant expressions still get a
/// slack so the caller can treat every entry uniformly.
inline int abs_slack(LpBuilder& b, const AffineExpr& expr, Encoding* enc = nullptr) {
  const int s = b.add_variable(0.0, kInf);
  b.add_less_equal(expr, AffineExpr::variable(s));
  b.add_less_equal(expr.scaled(-1.0), AffineExpr::variable(s));
  if (enc) {
    enc->aux_variables.push_back(s);
    enc->rows_added += 2;
  }
  return s;
}

/// ||v|| <= bound. MaxAbs needs no aux variables; SumAbs adds one slack per entry.
inline Encoding encode_vector_norm_bound(LpBuilder& b, NormKind norm, std::span<const AffineExpr> v,
                                         const AffineExpr& bound) {
  Encoding enc;
  if (norm == NormKind::MaxAbs) {
    for (const auto& e : v) {
      b.add_less_equal(e, bound);
      b.add_less_equal(e.scaled(-1.0), bound);
      enc.rows_added += 2;
    }
    return enc;
  }
  if (norm != NormKind::SumAbs) fail(ErrorKind::UnsupportedNorm, "vector norm encoder");
  AffineExpr sum;
  for (const auto& e : v) sum.add(abs_slack(b, e, &enc), 1.0);
  b.add_less_equal(sum, bound);
  ++enc.rows_added;
  return enc;
}

/// Bounds the induced norm of a matrix whose entry magnitudes are already
/// dominated by the slack variables in `slacks` (row-major; -1 marks a
/// structurally zero entry).
inline int bound_induced_norm(LpBuilder& b, NormKind norm, int rows, int cols, std::span<const int> slacks,
                              const AffineExpr& bound) {
  int added = 0;
  const bool by_row = norm == NormKind::MaxAbs;
  if (norm != NormKind::MaxAbs && norm != NormKind::SumAbs) fail(ErrorKind::UnsupportedNorm, "matrix norm encoder");
  const int outer = by_row ? rows : cols;
  const int inner = by_row ? cols : rows;
  for (int o = 0; o < outer; ++o) {
    AffineExpr sum;
    for (int i = 0; i < inner; ++i) {
      const int s = by_row ? slacks[static_cast<std::size_t>(o * cols + i)] : slacks[static_cast<std::size_t>(i * cols + o)];
      if (s >= 0) sum.add(s, 1.0);
    }
    b.add_less_equal(sum, bound);
    ++added;
  }
  return added;
}

/// ||M||_induced <= bound with one slack per entry: max row sum for MaxAbs,
/// max column sum for SumAbs.
inline Encoding encode_matrix_norm_bound(LpBuilder& b, NormKind norm, const AffineMatrix& m, const AffineExpr& bound) {
  if (norm != NormKind::MaxAbs && norm != NormKind::SumAbs) fail(ErrorKind::UnsupportedNorm, "matrix norm encoder");
  Encoding enc;
  std::vector<int> slacks;
  slacks.reserve(m.entries.size());
  for (const auto& e : m.entries) slacks.push_back(abs_slack(b, e, &enc));
  enc.rows_added += bound_induced_norm(b, norm, m.rows, m.cols, slacks, bound);
  return enc;
}

}  // namespace slsac::lp
