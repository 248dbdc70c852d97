// SPDX-License-Identifier: Apache-2.0
#include "sdf/losses.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sdf;
using namespace sdf::ad;

namespace {

Matrix random_points(Eigen::Index n, std::uint64_t seed, double s = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-s, s);
  Matrix m(n, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double velocity_loss_oracle(const Matrix& v, const loss::NeighborGraph& g) {
  double sum = 0.0;
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t j = 0; j < g.k; ++j)
      sum += g.weight(r, j) *
             (v.row(static_cast<Eigen::Index>(g.self[r])) - v.row(static_cast<Eigen::Index>(g.neighbor(r, j))))
                 .squaredNorm();
  return sum / static_cast<double>(g.rows());
}

}  // namespace

TEST(Knn, GraphMatchesBruteForce) {
  const Matrix x = random_points(300, 1);
  const auto g = loss::build_knn(x, 8);
  ASSERT_EQ(g.rows(), 300u);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const auto ref = oracle::brute_knn(x, x.row(static_cast<Eigen::Index>(i)).transpose(), 8, i);
    double total = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_EQ(g.neighbor(i, j), ref[j].second);
      EXPECT_NE(g.neighbor(i, j), i);
      EXPECT_GT(g.weight(i, j), 0.0);
      total += g.weight(i, j);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Knn, InverseDistanceWeights) {
  Matrix x(4, 3);
  x << 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 4;
  const auto g = loss::build_knn(x, 3);
  const double w1 = 1.0 / (1.0 + loss::kDistanceFloor), w2 = 1.0 / (2.0 + loss::kDistanceFloor),
               w4 = 1.0 / (4.0 + loss::kDistanceFloor);
  const double s = w1 + w2 + w4;
  EXPECT_EQ(g.neighbor(0, 0), 1u);
  EXPECT_NEAR(g.weight(0, 0), w1 / s, 1e-14);
  EXPECT_NEAR(g.weight(0, 1), w2 / s, 1e-14);
  EXPECT_NEAR(g.weight(0, 2), w4 / s, 1e-14);
}

TEST(Knn, Errors) {
  const Matrix x = random_points(5, 2);
  EXPECT_THROW(loss::build_knn(x, 0), InvalidArgument);
  EXPECT_THROW(loss::build_knn(x, 5), InvalidArgument);
}

TEST(Knn, RestrictedGraphSelectsSameNeighbors) {
  const Matrix x = random_points(200, 3);
  const auto full = loss::build_knn(x, 6);
  const std::vector<std::size_t> anchors{5, 17, 5, 199};
  const auto [g, rows] = loss::restrict_graph(full, anchors);
  ASSERT_EQ(g.rows(), anchors.size());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    EXPECT_EQ(rows[g.self[r]], anchors[r]);
    for (std::size_t j = 0; j < g.k; ++j) {
      EXPECT_EQ(rows[g.neighbor(r, j)], full.neighbor(anchors[r], j));
      EXPECT_EQ(g.weight(r, j), full.weight(anchors[r], j));
    }
  }
  const std::vector<std::size_t> bad{200};
  EXPECT_THROW(loss::restrict_graph(full, bad), InvalidArgument);
}

TEST(VelocityLoss, ZeroForUniformMotion) {
  const Matrix x = random_points(100, 4);
  const auto g = loss::build_knn(x, 8);
  Matrix v(100, 3);
  v.rowwise() = Eigen::RowVector3d(0.3, -1.0, 2.0);
  Tape t;
  EXPECT_EQ(loss::velocity_loss(t.constant(v), g).value()(0, 0), 0.0);
}

TEST(VelocityLoss, MatchesOracleAndIsNonNegative) {
  const Matrix x = random_points(150, 5);
  const auto g = loss::build_knn(x, 8);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix v = random_points(150, 100 + seed, 3.0);
    Tape t;
    const double got = loss::velocity_loss(t.constant(v), g).value()(0, 0);
    EXPECT_NEAR(got, velocity_loss_oracle(v, g), 1e-12 * std::max(1.0, got));
    EXPECT_GE(got, 0.0);
  }
}

TEST(VelocityLoss, GradientMatchesFiniteDifference) {
  const Matrix x = random_points(60, 6);
  const auto full = loss::build_knn(x, 8);
  const std::vector<std::size_t> anchors{0, 7, 13, 40, 59};
  const auto [g, rows] = loss::restrict_graph(full, anchors);
  ParamStore s;
  auto V = s.add("V", {rows.size(), 3}, ParamGroup::mlp);
  const Matrix init = random_points(static_cast<Eigen::Index>(rows.size()), 7);
  std::copy(init.data(), init.data() + init.size(), s.values(V).begin());
  auto f = [&](ParamStore& st) {
    st.zero_grad();
    Tape t;
    Var l = loss::velocity_loss(param_leaf(t, st, V, rows.size(), 3), g);
    t.backward(l);
    return l.value()(0, 0);
  };
  EXPECT_LT(fd_check(f, s, 1e-6, 1000).max_rel_error, 1e-6);
}

TEST(AccelerationLoss, Values) {
  Matrix a(2, 3);
  a << 3, -4, 0, 0, 0, -1;
  Tape t;
  EXPECT_DOUBLE_EQ(loss::acceleration_loss(t.constant(a), loss::AccelNorm::l1).value()(0, 0), 8.0 / 6.0);
  EXPECT_DOUBLE_EQ(loss::acceleration_loss(t.constant(a), loss::AccelNorm::l2).value()(0, 0), 3.0);
  EXPECT_EQ(loss::acceleration_loss(t.constant(Matrix::Zero(5, 3))).value()(0, 0), 0.0);
}

TEST(AccelerationLoss, RejectsBadInput) {
  Tape t;
  Matrix a = Matrix::Ones(2, 3);
  a(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(loss::acceleration_loss(t.constant(a)), InvalidArgument);
  EXPECT_THROW(loss::acceleration_loss(t.constant(Matrix(0, 3))), InvalidArgument);
}

TEST(AccelerationLoss, GradientMatchesFiniteDifference) {
  for (auto norm : {loss::AccelNorm::l1, loss::AccelNorm::l2}) {
    ParamStore s;
    auto A = s.add("A", {20, 3}, ParamGroup::mlp);
    const Matrix init = random_points(20, 8);
    std::copy(init.data(), init.data() + init.size(), s.values(A).begin());
    auto f = [&](ParamStore& st) {
      st.zero_grad();
      Tape t;
      Var l = loss::acceleration_loss(param_leaf(t, st, A, 20, 3), norm);
      t.backward(l);
      return l.value()(0, 0);
    };
    EXPECT_LT(fd_check(f, s, 1e-6, 60).max_rel_error, 1e-6);
  }
}

TEST(ReconLoss, ValueGradientAndShape) {
  Matrix gt(2, 3);
  gt << 0, 0, 0, 1, 1, 1;
  Matrix p(2, 3);
  p << 1, -2, 0.5, 1, 1, 0;
  Tape t;
  EXPECT_DOUBLE_EQ(loss::recon_loss_l1(t.constant(p), gt).value()(0, 0), 4.5 / 6.0);
  EXPECT_THROW(loss::recon_loss_l1(t.constant(Matrix::Ones(3, 3)), gt), InvalidArgument);

  ParamStore s;
  auto P = s.add("P", {2, 3}, ParamGroup::mlp);
  const std::vector<double> off{1.0, -2.0, 0.5, 2.0, 0.4, 0.0};  // away from every kink
  std::copy(off.begin(), off.end(), s.values(P).begin());
  auto f = [&](ParamStore& st) {
    st.zero_grad();
    Tape tt;
    Var l = loss::recon_loss_l1(param_leaf(tt, st, P, 2, 3), gt);
    tt.backward(l);
    return l.value()(0, 0);
  };
  EXPECT_LT(fd_check(f, s, 1e-6, 6).max_rel_error, 1e-6);
}

TEST(TotalLoss, WeightedSum) {
  loss::LossConfig cfg;
  EXPECT_NEAR(loss::total_loss(1.0, 2.0, 3.0, cfg), 3.03, 1e-12);
  Tape t;
  Var v = loss::total_loss(t.constant(Matrix::Constant(1, 1, 1.0)), t.constant(Matrix::Constant(1, 1, 2.0)),
                           t.constant(Matrix::Constant(1, 1, 3.0)), cfg);
  EXPECT_NEAR(v.value()(0, 0), 3.03, 1e-12);
  cfg.alpha = 0.0;
  cfg.beta = 0.0;
  EXPECT_EQ(loss::total_loss(1.5, 2.0, 3.0, cfg), 1.5);
}

TEST(LossConfig, Validation) {
  loss::LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = -1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.alpha = 1.0;
  c.beta = std::numeric_limits<double>::infinity();
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.beta = 0.0;
  c.k = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}
