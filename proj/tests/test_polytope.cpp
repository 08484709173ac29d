#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "slsac/polytope.hpp"

using namespace slsac;

namespace {

LinearConstraintSet single_row(std::initializer_list<double> a, double b) {
  LinearConstraintSet c;
  c.normals.resize(1, static_cast<Eigen::Index>(a.size()));
  int j = 0;
  for (double v : a) c.normals(0, j++) = v;
  c.offsets.resize(1);
  c.offsets[0] = b;
  return c;
}

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  int j = 0;
  for (double x : xs) v[j++] = x;
  return v;
}

bool has_vertex(const VertexList& vs, const Eigen::VectorXd& v, double tol = 1e-8) {
  return std::any_of(vs.begin(), vs.end(), [&](const Eigen::VectorXd& w) { return (w - v).lpNorm<Eigen::Infinity>() < tol; });
}

bool same_vertex_set(const VertexList& a, const VertexList& b, double tol = 1e-7) {
  if (a.size() != b.size()) return false;
  for (const auto& v : a)
    if (!has_vertex(b, v, tol)) return false;
  return true;
}

// Oracle: every point solving some p-subset of rows with equality that also
// satisfies all rows, computed with a different factorization than the library.
VertexList subset_oracle(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  const int m = static_cast<int>(a.rows()), d = static_cast<int>(a.cols());
  VertexList out;
  std::vector<bool> mask(static_cast<std::size_t>(m), false);
  std::fill(mask.begin(), mask.begin() + d, true);
  do {
    Eigen::MatrixXd s(d, d);
    Eigen::VectorXd r(d);
    int k = 0;
    for (int i = 0; i < m; ++i) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      s.row(k) = a.row(i);
      r[k] = b[i];
      ++k;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(s, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv[d - 1] < 1e-9 * sv[0]) continue;
    const Eigen::VectorXd x = svd.solve(r);
    if (((a * x - b).array() <= 1e-9).all() && !has_vertex(out, x)) out.push_back(x);
  } while (std::prev_permutation(mask.begin(), mask.end()));
  return out;
}

}  // namespace

TEST(Polytope, BoxClippedByDiagonal) {
  auto p = HalfspacePolytope::box(vec({0, 0}), vec({1, 1}));
  p = intersect(p, single_row({1, 1}, 1));
  const auto& vs = enumerate_vertices(p);
  EXPECT_EQ(vs.size(), 3u);
  EXPECT_TRUE(has_vertex(vs, vec({0, 0})));
  EXPECT_TRUE(has_vertex(vs, vec({1, 0})));
  EXPECT_TRUE(has_vertex(vs, vec({0, 1})));
}

TEST(Polytope, StandardSimplexInThreeDimensions) {
  Eigen::MatrixXd a(4, 3);
  a << -1, 0, 0, 0, -1, 0, 0, 0, -1, 1, 1, 1;
  Eigen::VectorXd b(4);
  b << 0, 0, 0, 1;
  const HalfspacePolytope p(a, b);
  EXPECT_EQ(enumerate_vertices(p).size(), 4u);
}

TEST(Polytope, RowsAreStoredUnitNormalized) {
  Eigen::MatrixXd a(1, 2);
  a << 3, 4;
  const HalfspacePolytope p(a, vec({10}));
  EXPECT_NEAR(p.normals().row(0).norm(), 1.0, 1e-15);
  EXPECT_NEAR(p.offsets()[0], 2.0, 1e-15);
}

TEST(Polytope, TighterDuplicateReplacesLooserRow) {
  auto p = HalfspacePolytope::box(vec({0, 0}), vec({1, 1}));
  const int rows = p.num_rows();
  p = intersect(p, single_row({2, 0}, 1));  // x <= 0.5
  EXPECT_EQ(p.num_rows(), rows);
  EXPECT_FALSE(p.contains(vec({0.6, 0.5})));
  p = intersect(p, single_row({1, 0}, 0.9));  // looser, dropped
  EXPECT_EQ(p.num_rows(), rows);
}

TEST(Polytope, EmptyAfterContradictoryCut) {
  auto p = HalfspacePolytope::box(vec({0, 0}), vec({1, 1}));
  p = intersect(p, single_row({1, 0}, -0.5));
  try {
    enumerate_vertices(p);
    FAIL() << "expected Empty";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Empty);
  }
}

TEST(Polytope, UnboundedIsReported) {
  Eigen::MatrixXd a(1, 2);
  a << 1, 0;
  const HalfspacePolytope p(a, vec({1}));
  try {
    enumerate_vertices(p);
    FAIL() << "expected Unbounded";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Unbounded);
  }
}

TEST(Polytope, DimensionLimit) {
  const auto p = HalfspacePolytope::box(Eigen::VectorXd::Zero(13), Eigen::VectorXd::Ones(13));
  try {
    enumerate_vertices(p);
    FAIL() << "expected DimensionTooLarge";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionTooLarge);
  }
}

TEST(Polytope, IntersectRejectsWrongWidth) {
  auto p = HalfspacePolytope::box(vec({0, 0}), vec({1, 1}));
  EXPECT_THROW(intersect(p, single_row({1, 0, 0}, 1)), Error);
}

TEST(Polytope, IntersectAdvancesStamp) {
  auto p = HalfspacePolytope::box(vec({0}), vec({1}));
  const auto s = p.stamp();
  p = intersect(p, single_row({1}, 0.5));
  EXPECT_EQ(p.stamp(), s + 1);
}

TEST(Polytope, MatchesSubsetOracleOnRandomPolytopes) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    const int d = 2 + trial % 3;
    const int extra = 2 + trial % 5;
    Eigen::MatrixXd a(2 * d + extra, d);
    Eigen::VectorXd b(2 * d + extra);
    for (int j = 0; j < d; ++j) {
      a.row(2 * j).setZero();
      a(2 * j, j) = 1;
      b[2 * j] = 1;
      a.row(2 * j + 1).setZero();
      a(2 * j + 1, j) = -1;
      b[2 * j + 1] = 1;
    }
    for (int i = 2 * d; i < a.rows(); ++i) {
      for (int j = 0; j < d; ++j) a(i, j) = g(rng);
      b[i] = u(rng) * a.row(i).norm();  // keeps the origin strictly inside
    }
    const HalfspacePolytope p(a, b);
    const auto expected = subset_oracle(a, b);
    EXPECT_TRUE(same_vertex_set(enumerate_vertices(p), expected)) << "trial " << trial;
  }
}

TEST(Polytope, IncrementalCutsAgreeWithFromScratchEnumeration) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 0.8);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = 2 + trial % 4;
    auto p = HalfspacePolytope::box(-Eigen::VectorXd::Ones(d), Eigen::VectorXd::Ones(d));
    enumerate_vertices(p);
    for (int step = 0; step < 8; ++step) {
      LinearConstraintSet c;
      c.normals.resize(1, d);
      for (int j = 0; j < d; ++j) c.normals(0, j) = g(rng);
      c.offsets.resize(1);
      c.offsets[0] = u(rng) * c.normals.row(0).norm();
      p = intersect(p, c);
      ASSERT_TRUE(p.has_vertex_cache());
      const HalfspacePolytope fresh(p.normals(), p.offsets());
      EXPECT_TRUE(same_vertex_set(*p.cached_vertices(), enumerate_vertices(fresh)))
          << "trial " << trial << " step " << step;
    }
  }
}

TEST(Polytope, IncrementalCutThroughVertexKeepsDegenerateVertices) {
  auto p = HalfspacePolytope::box(vec({0, 0}), vec({1, 1}));
  enumerate_vertices(p);
  p = intersect(p, single_row({1, 1}, 1));  // passes through (1,0) and (0,1)
  EXPECT_TRUE(same_vertex_set(*p.cached_vertices(), enumerate_vertices(HalfspacePolytope(p.normals(), p.offsets()))));
  p = intersect(p, single_row({1, -1}, 0));  // through the origin and (0.5, 0.5)
  EXPECT_TRUE(same_vertex_set(*p.cached_vertices(), enumerate_vertices(HalfspacePolytope(p.normals(), p.offsets()))));
  EXPECT_EQ(p.cached_vertices()->size(), 3u);
}

TEST(Polytope, RemoveRedundantKeepsTheSet) {
  auto p = HalfspacePolytope::box(vec({0, 0}), vec({1, 1}));
  p = intersect(p, single_row({1, 1}, 5));   // redundant
  p = intersect(p, single_row({1, 1}, 1.5)); // not redundant
  p = intersect(p, single_row({-1, 1}, 3));  // redundant
  const auto before = enumerate_vertices(HalfspacePolytope(p.normals(), p.offsets()));
  const auto q = remove_redundant(p);
  EXPECT_EQ(q.num_rows(), 5);
  EXPECT_EQ(q.intersections_since_compaction(), 0);
  EXPECT_TRUE(same_vertex_set(enumerate_vertices(q), before));
}

TEST(Polytope, CompactionRunsAfterPeriod) {
  auto p = HalfspacePolytope::box(vec({0}), vec({1}));
  for (int i = 0; i < kCompactionPeriod; ++i) p = intersect(p, single_row({1}, 2.0 + i));
  EXPECT_EQ(p.intersections_since_compaction(), kCompactionPeriod);
  const auto q = maybe_compact(p);
  EXPECT_EQ(q.intersections_since_compaction(), 0);
  EXPECT_EQ(q.num_rows(), 2);
}

TEST(Polytope, ChebyshevCenterOfBox) {
  const auto p = HalfspacePolytope::box(vec({0, 0}), vec({2, 4}));
  const auto c = chebyshev_center(p);
  EXPECT_NEAR(c[0], 1.0, 1e-9);
  EXPECT_TRUE(p.contains(c));
}

TEST(Polytope, ChebyshevCenterOfRightTriangleIsIncenter) {
  // Triangle (0,0),(1,0),(0,1): incenter at r = (2 - sqrt 2) / 2 on both axes.
  auto p = HalfspacePolytope::box(vec({0, 0}), vec({1, 1}));
  p = intersect(p, single_row({1, 1}, 1));
  const auto c = chebyshev_center(p);
  const double r = (2.0 - std::sqrt(2.0)) / 2.0;
  EXPECT_NEAR(c[0], r, 1e-8);
  EXPECT_NEAR(c[1], r, 1e-8);
}

TEST(Polytope, ChebyshevCenterOfSegmentIsMidpoint) {
  auto p = HalfspacePolytope::box(vec({0, 0}), vec({1, 1}));
  p = intersect(p, single_row({0, 1}, 0.25));
  p = intersect(p, single_row({0, -1}, -0.25));
  const auto c = chebyshev_center(p);
  EXPECT_NEAR(c[0], 0.5, 1e-8);
  EXPECT_NEAR(c[1], 0.25, 1e-8);
}

TEST(Polytope, ChebyshevCenterOfPoint) {
  const auto p = HalfspacePolytope::box(vec({0.3, -1}), vec({0.3, -1}));
  const auto c = chebyshev_center(p);
  EXPECT_NEAR(c[0], 0.3, 1e-12);
  EXPECT_NEAR(c[1], -1.0, 1e-12);
}

TEST(Polytope, JsonRoundTrip) {
  auto p = HalfspacePolytope::box(vec({0, 0}), vec({1, 1}));
  p = intersect(p, single_row({1, 1}, 1));
  const auto q = polytope_from_json(to_json(p));
  ASSERT_EQ(q.num_rows(), p.num_rows());
  EXPECT_TRUE((q.normals() - p.normals()).isZero(1e-14));
  EXPECT_TRUE((q.offsets() - p.offsets()).isZero(1e-14));
}

TEST(Polytope, JsonRejectsUnknownKeys) {
  nlohmann::json j = to_json(HalfspacePolytope::box(vec({0}), vec({1})));
  j["extra"] = 1;
  EXPECT_THROW(polytope_from_json(j), Error);
}
