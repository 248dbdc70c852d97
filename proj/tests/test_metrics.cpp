// SPDX-License-Identifier: Apache-2.0
#include "sdf/metrics.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sdf;

namespace {

Matrix uniform_points(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(n, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Matrix gaussian(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(n, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

}  // namespace

TEST(KdTree, MatchesBruteForce) {
  const Matrix x = uniform_points(700, 1);
  const knn::KdTree tree(x);
  const Matrix q = uniform_points(100, 2);
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (std::size_t k : {1u, 5u, 16u}) {
      const auto got = tree.query(q.row(i).transpose(), k);
      const auto ref = oracle::brute_knn(x, q.row(i).transpose(), k);
      ASSERT_EQ(got.size(), ref.size());
      for (std::size_t j = 0; j < k; ++j) {
        EXPECT_EQ(got[j].index, ref[j].second);
        EXPECT_DOUBLE_EQ(got[j].dist2, ref[j].first);
      }
    }
}

TEST(KdTree, TiesBreakByIndexAndExcludeSkips) {
  // Integer lattice with duplicated points: many equal distances.
  Matrix x(125 * 2, 3);
  for (int i = 0; i < 125; ++i) {
    x.row(i) = Eigen::RowVector3d(i % 5, (i / 5) % 5, i / 25);
    x.row(125 + i) = x.row(i);
  }
  const knn::KdTree tree(x);
  for (std::size_t e : {0u, 62u, 200u}) {
    const Vec3 q = x.row(static_cast<Eigen::Index>(e)).transpose();
    const auto got = tree.query(q, 20, e);
    const auto ref = oracle::brute_knn(x, q, 20, e);
    for (std::size_t j = 0; j < 20; ++j) EXPECT_EQ(got[j].index, ref[j].second);
  }
  EXPECT_TRUE(tree.query(Vec3::Zero(), 0).empty());
  EXPECT_EQ(tree.query(Vec3::Zero(), 1000).size(), 250u);
}

TEST(MoransI, UniformTranslationIsOne) {
  const Matrix x = uniform_points(2000, 3);
  Matrix v(2000, 3);
  v.rowwise() = Eigen::RowVector3d(0.01, -0.02, 0.005);
  const auto s = metrics::morans_i_frame(x, v);
  ASSERT_FALSE(s.skipped);
  EXPECT_NEAR(s.mean_i, 1.0, 1e-9);
}

TEST(MoransI, IndependentNoiseNearZero) {
  const Matrix x = uniform_points(2000, 4);
  std::vector<double> scores;
  for (std::uint64_t seed = 0; seed < 5; ++seed) scores.push_back(metrics::morans_i_frame(x, gaussian(2000, 10 + seed)).mean_i);
  for (double s : scores) EXPECT_LT(std::abs(s), 0.05);
}

TEST(MoransI, MatchesBruteForceOracle) {
  const Matrix x = uniform_points(300, 5);
  Matrix v = gaussian(300, 6);
  v.col(0) += x.col(1);  // partially coherent
  for (std::size_t K : {2u, 10u}) {
    const auto s = metrics::morans_i_frame(x, v, K);
    EXPECT_NEAR(s.mean_i, oracle::morans_i(x, v, K), 1e-10);
  }
}

TEST(MoransI, ThreadCountInvariant) {
  const Matrix x = uniform_points(500, 7);
  const Matrix v = gaussian(500, 8);
  const double s0 = metrics::morans_i_frame(x, v, 10, 0).mean_i;
  for (unsigned th : {2u, 4u}) EXPECT_EQ(metrics::morans_i_frame(x, v, 10, th).mean_i, s0);
}

TEST(MoransI, StaticFrameSkipped) {
  const Matrix x = uniform_points(50, 10);
  EXPECT_TRUE(metrics::morans_i_frame(x, Matrix::Zero(50, 3)).skipped);
  TrajectorySet still;
  still.frames = {x, x, x};
  const auto rep = metrics::morans_i_sequence(still);
  EXPECT_TRUE(rep.no_motion);
  EXPECT_EQ(rep.per_frame.size(), 2u);
}

TEST(MoransI, Errors) {
  const Matrix x = uniform_points(10, 11);
  EXPECT_THROW(metrics::morans_i_frame(x, Matrix::Ones(9, 3)), InvalidArgument);
  EXPECT_THROW(metrics::morans_i_frame(x, Matrix::Ones(10, 3), 1), InvalidArgument);
  EXPECT_THROW(metrics::morans_i_frame(x, Matrix::Ones(10, 3), 10), InvalidArgument);
}

TEST(MoransI, ClassicalVariant) {
  const Matrix x = uniform_points(400, 12);
  Matrix v(400, 3);
  v.col(0) = x.col(0);
  v.col(1) = x.col(1);
  v.col(2).setZero();
  EXPECT_GT(metrics::morans_i_frame_classical(x, v).mean_i, 0.8);
  EXPECT_LT(std::abs(metrics::morans_i_frame_classical(x, gaussian(400, 13)).mean_i), 0.1);
  Matrix u(400, 3);
  u.rowwise() = Eigen::RowVector3d(1, 0, 0);
  EXPECT_TRUE(metrics::morans_i_frame_classical(x, u).skipped);
}

TEST(MotionVectors, Differences) {
  TrajectorySet t;
  t.frames = {Matrix::Zero(3, 3), Matrix::Ones(3, 3), Matrix::Constant(3, 3, 3.0)};
  const auto m = metrics::motion_vectors(t);
  ASSERT_EQ(m.vectors.size(), 2u);
  EXPECT_EQ(m.vectors[0], Matrix::Ones(3, 3));
  EXPECT_EQ(m.vectors[1], Matrix::Constant(3, 3, 2.0));
  TrajectorySet one;
  one.frames = {Matrix::Zero(3, 3)};
  EXPECT_THROW(metrics::motion_vectors(one), InvalidArgument);
}

TEST(Epe, Values) {
  Matrix a = Matrix::Zero(2, 3), b(2, 3);
  b << 3, 4, 0, 0, 0, 1;
  EXPECT_DOUBLE_EQ(metrics::frame_epe(a, b), 3.0);
  TrajectorySet p, g;
  p.frames = {a, a};
  g.frames = {a, b};
  EXPECT_DOUBLE_EQ(metrics::epe(p, g, 1.0), 1.5);
  EXPECT_DOUBLE_EQ(metrics::epe(p, g), 1.5e4);
  EXPECT_EQ(metrics::epe(g, g), 0.0);
  EXPECT_THROW(metrics::frame_epe(a, Matrix::Zero(3, 3)), InvalidArgument);
}

TEST(Report, CsvLayout) {
  std::vector<metrics::ReportRow> rows{{3, 0.5, 12.25, 100}, {4, std::nullopt, 1.0, 100}};
  EXPECT_EQ(metrics::format_report(rows), "frame_idx,mean_I,epe,n_points\n3,0.5,12.25,100\n4,nan,1,100\n");
}
