#pragma once

#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "slsac/errors.hpp"

namespace slsac {

/// Polytopic norms: the unit ball must be a polytope so every bound stays linear.
enum class NormKind {
  MaxAbs,  // l-infinity; induced matrix norm is the max absolute row sum
  SumAbs,  // l-1; induced matrix norm is the max absolute column sum
};

inline std::string to_string(NormKind norm) { return norm == NormKind::MaxAbs ? "MaxAbs" : "SumAbs"; }

inline NormKind parse_norm(std::string_view text) {
  if (text == "MaxAbs" || text == "linf") return NormKind::MaxAbs;
  if (text == "SumAbs" || text == "l1") return NormKind::SumAbs;
  fail(ErrorKind::UnsupportedNorm, "unknown norm '" + std::string(text) + "'");
}

inline double vector_norm(NormKind norm, const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) return 0.0;
  return norm == NormKind::MaxAbs ? v.cwiseAbs().maxCoeff() : v.cwiseAbs().sum();
}

inline double induced_norm(NormKind norm, const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (m.size() == 0) return 0.0;
  return norm == NormKind::MaxAbs ? m.cwiseAbs().rowwise().sum().maxCoeff()
                                  : m.cwiseAbs().colwise().sum().maxCoeff();
}

}  // namespace slsac
