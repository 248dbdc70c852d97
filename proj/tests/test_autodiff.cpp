// SPDX-License-Identifier: Apache-2.0
#include "sdf/autodiff.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sdf;
using namespace sdf::ad;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double s = 1.0) {
  std::uniform_real_distribution<double> u(-s, s);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Weighted sum so every output entry carries a distinct gradient.
Var probe(Var y, const Matrix& w) { return sum_all(mul(y, y.tape->constant(w))); }

}  // namespace

TEST(ParamStore, ShapesAndLookup) {
  ParamStore s;
  auto a = s.add("a", {2, 3}, ParamGroup::mlp);
  auto b = s.add("b", {4}, ParamGroup::grid);
  EXPECT_EQ(s.total_count(), 10u);
  EXPECT_EQ(s.values(a).size(), 6u);
  EXPECT_EQ(s.values(b).size(), 4u);
  EXPECT_TRUE(s.find("a").has_value());
  EXPECT_FALSE(s.find("c").has_value());
  EXPECT_THROW(s.add("a", {1}, ParamGroup::mlp), InvalidArgument);
}

TEST(Tape, LinearMatchesLoopOracle) {
  std::mt19937_64 rng(1);
  ParamStore s;
  auto W = s.add("W", {4, 5}, ParamGroup::mlp);
  auto b = s.add("b", {5}, ParamGroup::mlp);
  for (double& v : s.all_values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  Tape t;
  const Matrix x = random_matrix(7, 4, rng);
  Var y = forward_linear(t.constant(x), s, W, b);
  const Matrix ref = oracle::linear_layer(x, s.matrix(W, 4, 5), s.matrix(b, 1, 5));
  EXPECT_LT((y.value() - ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Tape, BackwardTwiceIsStateError) {
  Tape t;
  Var x = t.constant(Matrix::Ones(1, 1));
  Var y = scale(x, 2.0);
  t.backward(y);
  EXPECT_TRUE(t.consumed());
  EXPECT_THROW(t.backward(y), StateError);
  EXPECT_THROW(t.constant(Matrix::Ones(1, 1)), StateError);
  t.reset();
  EXPECT_NO_THROW(t.constant(Matrix::Ones(1, 1)));
}

TEST(Tape, BackwardShapeMismatch) {
  Tape t;
  Var x = t.constant(Matrix::Ones(2, 2));
  EXPECT_THROW(t.backward(x, Matrix::Ones(1, 1)), InvalidArgument);
}

TEST(Tape, UnreachableNodeHasZeroGradient) {
  Tape t;
  Var a = t.constant(Matrix::Ones(2, 2));
  Var b = t.constant(Matrix::Ones(3, 1));
  Var y = sum_all(a);
  t.backward(y);
  EXPECT_EQ(t.grad(b), Matrix::Zero(3, 1));
  EXPECT_EQ(t.grad(a), Matrix::Ones(2, 2));
}

TEST(Tape, FanOutAccumulates) {
  Tape t;
  Var x = t.constant(Matrix::Constant(1, 1, 3.0));
  Var y = mul(x, x);
  t.backward(sum_all(add(y, x)));
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 7.0);
}

TEST(FdCheck, AllOpsComposed) {
  std::mt19937_64 rng(2);
  ParamStore s;
  auto W1 = s.add("W1", {3, 8}, ParamGroup::mlp);
  auto b1 = s.add("b1", {8}, ParamGroup::mlp);
  auto W2 = s.add("W2", {11, 4}, ParamGroup::mlp);
  auto b2 = s.add("b2", {4}, ParamGroup::mlp);
  auto P = s.add("P", {5, 4}, ParamGroup::grid);
  for (double& v : s.all_values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const Matrix x = random_matrix(5, 3, rng);
  const Matrix w = random_matrix(10, 2, rng);
  auto loss = [&](ParamStore& st) {
    st.zero_grad();
    Tape t;
    Var in = t.constant(x);
    Var h = activation(forward_linear(in, st, W1, b1), Activation::sine(3.0));
    const std::array<Var, 2> parts{h, in};
    Var y = forward_linear(concat_cols(parts), st, W2, b2);
    Var p = param_leaf(t, st, P, 5, 4);
    const std::array<Var, 2> terms{y, p};
    const std::array<double, 2> coeffs{0.7, -1.3};
    Var z = lincomb(terms, coeffs);
    Var zz = sub(mul(z, z), scale(z, 0.5));
    Var r = activation(slice_cols(zz, 1, 2), Activation::relu());
    const std::array<Var, 2> rows{r, gather_rows(slice_cols(zz, 0, 2), {4, 0, 2, 2, 1})};
    Var stacked = concat_rows(rows);
    Var out = probe(stacked, w);
    t.backward(out);
    return out.value()(0, 0);
  };
  const auto rep = fd_check(loss, s, 1e-6, 1000, 3);
  EXPECT_LT(rep.max_rel_error, 1e-5) << "worst index " << rep.worst_index;
}

TEST(FdCheck, DetectsWrongGradient) {
  ParamStore s;
  auto p = s.add("p", {3}, ParamGroup::mlp);
  for (double& v : s.values(p)) v = 0.5;
  auto broken = [&](ParamStore& st) {
    st.zero_grad();
    double sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const double v = st.values(p)[i];
      sum += v * v;
      st.grads(p)[i] = v;  // should be 2v
    }
    return sum;
  };
  EXPECT_GT(fd_check(broken, s, 1e-6, 10).max_rel_error, 0.4);
}

TEST(ReduceSum, ThreadCountInvariant) {
  std::mt19937_64 rng(4);
  std::vector<double> x(100003);
  std::normal_distribution<double> d(0.0, 1e3);
  for (double& v : x) v = d(rng);
  const double s0 = reduce_sum(x, 0);
  for (unsigned th : {1u, 2u, 3u, 8u}) EXPECT_EQ(reduce_sum(x, th), s0);
  double naive = 0.0;
  for (double v : x) naive += v;
  EXPECT_LT(std::abs(s0 - naive), 1e-10 * std::max(1.0, std::abs(naive)) * 1e3);
}

TEST(ReduceSum, EmptyAndSmall) {
  EXPECT_EQ(reduce_sum(std::span<const double>{}), 0.0);
  std::vector<double> x{1.0, 2.0, 3.5};
  EXPECT_EQ(reduce_sum(x), 6.5);
}

TEST(Ops, ShapeErrors) {
  Tape t;
  Var a = t.constant(Matrix::Ones(2, 3));
  Var b = t.constant(Matrix::Ones(3, 2));
  EXPECT_THROW(add(a, b), InvalidArgument);
  EXPECT_THROW(mul(a, b), InvalidArgument);
  EXPECT_THROW(slice_cols(a, 2, 2), InvalidArgument);
  EXPECT_THROW(gather_rows(a, {5}), InvalidArgument);
}
