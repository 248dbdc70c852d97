// SPDX-License-Identifier: Apache-2.0
#include "sdf/trainer.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sdf;

namespace {

// Textbook Adam on a flat vector.
struct AdamOracle {
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& x, const std::vector<double>& g, double lr) {
    if (m.empty()) m.assign(x.size(), 0.0), v.assign(x.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
};

train::TrainConfig small_config(std::size_t steps) {
  train::TrainConfig c;
  c.field.hidden_width = 32;
  c.steps = steps;
  c.batch_points = 64;
  c.batch_times = 2;
  c.reg_anchors = 16;
  return c;
}

}  // namespace

TEST(Adam, MatchesTextbookUpdate) {
  ad::ParamStore s;
  auto a = s.add("a", {3}, ad::ParamGroup::mlp);
  auto b = s.add("b", {2}, ad::ParamGroup::grid);
  std::mt19937_64 rng(0);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& x : s.all_values()) x = u(rng);
  std::vector<double> xa(s.values(a).begin(), s.values(a).end()), xb(s.values(b).begin(), s.values(b).end());
  train::Adam opt(s);
  AdamOracle oa, ob;
  for (int step = 0; step < 5; ++step) {
    std::vector<double> ga(3), gb(2);
    for (auto& g : ga) g = u(rng);
    for (auto& g : gb) g = 10.0 * u(rng);
    std::copy(ga.begin(), ga.end(), s.grads(a).begin());
    std::copy(gb.begin(), gb.end(), s.grads(b).begin());
    opt.step(s, {1e-2, 1e-1, 1e-1});
    oa.step(xa, ga, 1e-2);
    ob.step(xb, gb, 1e-1);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s.values(a)[i], xa[i], 1e-14);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(s.values(b)[i], xb[i], 1e-14);
  EXPECT_EQ(opt.steps(), 5);
}

TEST(Adam, FirstStepHasUnitScale) {
  ad::ParamStore s;
  auto p = s.add("p", {4}, ad::ParamGroup::mlp);
  const std::vector<double> g{1e-3, -5.0, 200.0, 0.5};
  std::copy(g.begin(), g.end(), s.grads(p).begin());
  train::Adam opt(s);
  train::adam_step(s, opt, 0.01);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(s.values(p)[i], -0.01 * (g[i] > 0 ? 1.0 : -1.0), 1e-6);
}

TEST(Adam, NonFiniteGradientLeavesStateUntouched) {
  ad::ParamStore s;
  auto p = s.add("p", {3}, ad::ParamGroup::codes);
  for (double& x : s.values(p)) x = 1.0;
  train::Adam opt(s);
  s.grads(p)[1] = std::numeric_limits<double>::infinity();
  const auto version = s.version();
  EXPECT_THROW(opt.step(s, {1, 1, 1}), NumericError);
  for (double x : s.values(p)) EXPECT_EQ(x, 1.0);
  for (double m : opt.first_moment()) EXPECT_EQ(m, 0.0);
  EXPECT_EQ(opt.steps(), 0);
  EXPECT_EQ(s.version(), version);
}

TEST(TrainConfig, RatesDecayPerGroup) {
  train::TrainConfig c;
  c.steps = 11;
  const auto r0 = c.rates(0), r1 = c.rates(10), mid = c.rates(5);
  EXPECT_DOUBLE_EQ(r0[0], 1e-3);
  EXPECT_DOUBLE_EQ(r0[1], 1e-2);
  EXPECT_DOUBLE_EQ(r0[2], 1e-2);
  EXPECT_NEAR(r1[0], 1e-5, 1e-18);
  EXPECT_NEAR(mid[0], 1e-4, 1e-16);
  for (std::size_t s = 1; s < 11; ++s) EXPECT_LT(c.rates(s)[0], c.rates(s - 1)[0]);
}

TEST(TrainConfig, Validation) {
  train::TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.steps = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.lr = 0.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.n_knots = 1;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.K = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.batch_points = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(TrainConfig, KeyValueRoundTrip) {
  train::TrainConfig c;
  c.field.encoder = EncoderKind::triaxes;
  c.field.grid_resolutions = {4, 8};
  c.n_knots = 7;
  c.loss.alpha = 0.25;
  c.loss.accel_norm = loss::AccelNorm::l2;
  c.steps = 123;
  c.seed = 9;
  ckpt::KeyValues kv;
  train::write_train_config(c, kv);
  train::TrainConfig d;
  train::apply_train_config(kv, d);
  ckpt::KeyValues kv2;
  train::write_train_config(d, kv2);
  EXPECT_EQ(kv, kv2);
  EXPECT_EQ(d.field.encoder, EncoderKind::triaxes);
  EXPECT_EQ(*d.n_knots, 7);

  EXPECT_THROW(train::apply_train_config({{"learning_rate", "1"}}, d), InvalidArgument);
  EXPECT_THROW(train::apply_train_config({{"steps", "many"}}, d), InvalidArgument);
  EXPECT_THROW(train::apply_train_config({{"accel_norm", "l3"}}, d), InvalidArgument);
}

TEST(Train, KnotPolicy) {
  const auto traj = io::gen_synthetic(io::SceneKind::rotate, 50, 33, 0);
  const auto sp = io::split(traj, {4, 1.0}, 0);  // 9 training frames
  train::TrainConfig c;
  EXPECT_EQ(train::resolve_knots(c, sp), spline::knot_count(9, 2));
  c.n_knots = 6;
  EXPECT_EQ(train::resolve_knots(c, sp), 6);
}

TEST(Train, LossDecreasesAndLogIsComplete) {
  const auto traj = io::gen_synthetic(io::SceneKind::rotate, 200, 17, 1);
  const auto sp = io::split(traj, {2, 0.5}, 1);
  auto c = small_config(150);
  const auto r = train::train(traj, sp, c);
  ASSERT_EQ(r.log.records.size(), 150u);
  EXPECT_FALSE(r.log.diverged);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += r.log.records[i].recon;
    tail += r.log.records[140 + i].recon;
  }
  EXPECT_LT(tail, 0.5 * head);
  for (const auto& rec : r.log.records) {
    EXPECT_GT(rec.lv, 0.0);
    EXPECT_NEAR(rec.total, rec.recon + c.loss.alpha * rec.lv + c.loss.beta * rec.lacc, 1e-12);
  }
  EXPECT_EQ(*r.log.find_meta("n_knots"), std::to_string(spline::knot_count(9, 2)));
  EXPECT_EQ(*r.log.find_meta("supervised_points"), "100");
  const std::string csv = r.log.to_csv(false);
  EXPECT_EQ(csv.rfind("# ", 0), 0u);
  EXPECT_NE(csv.find("step,recon,lv,lacc,total,wallclock_ms\n"), std::string::npos);
}

TEST(Train, ZeroWeightRegularizersAreSkipped) {
  const auto traj = io::gen_synthetic(io::SceneKind::rotate, 60, 9, 1);
  const auto sp = io::split(traj, {2, 1.0}, 1);
  auto c = small_config(5);
  c.loss.alpha = 0.0;
  c.loss.beta = 0.0;
  const auto r = train::train(traj, sp, c);
  for (const auto& rec : r.log.records) {
    EXPECT_EQ(rec.lv, 0.0);
    EXPECT_EQ(rec.lacc, 0.0);
    EXPECT_EQ(rec.total, rec.recon);
  }
}

TEST(Train, DeterministicUnderFixedSeed) {
  const auto traj = io::gen_synthetic(io::SceneKind::bending_sheet, 120, 9, 2);
  const auto sp = io::split(traj, {2, 0.5}, 2);
  auto c = small_config(20);
  c.seed = 5;
  const auto a = train::train(traj, sp, c);
  const auto b = train::train(traj, sp, c);
  c.threads = 3;
  const auto d = train::train(traj, sp, c);
  EXPECT_EQ(ckpt::encode(a.model->to_checkpoint()), ckpt::encode(b.model->to_checkpoint()));
  EXPECT_EQ(ckpt::encode(a.model->to_checkpoint()), ckpt::encode(d.model->to_checkpoint()));
  EXPECT_EQ(a.log.to_csv(false), b.log.to_csv(false));
  c.seed = 6;
  const auto e = train::train(traj, sp, c);
  EXPECT_NE(ckpt::encode(a.model->to_checkpoint()), ckpt::encode(e.model->to_checkpoint()));
}

TEST(Train, HookStopsEarly) {
  const auto traj = io::gen_synthetic(io::SceneKind::rotate, 60, 9, 1);
  const auto sp = io::split(traj, {2, 1.0}, 1);
  std::size_t calls = 0;
  const auto r = train::train(traj, sp, small_config(50), [&](std::size_t step, const train::StepRecord&) {
    ++calls;
    return step < 2;
  });
  EXPECT_EQ(calls, 3u);
  EXPECT_EQ(r.log.records.size(), 3u);
}

TEST(Train, DivergenceKeepsLastGoodParameters) {
  const auto traj = io::gen_synthetic(io::SceneKind::rotate, 60, 9, 1);
  const auto sp = io::split(traj, {2, 1.0}, 1);
  auto c = small_config(200);
  c.lr = 1e305;
  c.grid_lr_mult = 1e3;
  const auto r = train::train(traj, sp, c);
  ASSERT_TRUE(r.log.diverged);
  EXPECT_FALSE(r.log.message.empty());
  EXPECT_LT(r.log.records.size(), 200u);
  for (double v : r.model->field().params().all_values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Train, InputErrors) {
  const auto traj = io::gen_synthetic(io::SceneKind::rotate, 60, 9, 1);
  auto sp = io::split(traj, {2, 1.0}, 1);
  auto bad = sp;
  bad.supervised_points = {60};
  EXPECT_THROW(train::train(traj, bad, small_config(1)), InvalidArgument);
  bad = sp;
  bad.train_frames = {0};
  EXPECT_THROW(train::train(traj, bad, small_config(1)), InvalidArgument);
  bad = sp;
  bad.supervised_points.clear();
  EXPECT_THROW(train::train(traj, bad, small_config(1)), InvalidArgument);
}

TEST(Evaluate, ReplayHasZeroError) {
  const auto traj = io::gen_synthetic(io::SceneKind::swing_arm, 300, 13, 3);
  const auto sp = io::split(traj, {4, 1.0}, 0);
  ReplayDeformer replay(traj);
  const auto rep = train::evaluate(replay, traj, sp);
  EXPECT_EQ(rep.epe, 0.0);
  EXPECT_EQ(rep.rows.size(), sp.test_frames.size());
  EXPECT_NEAR(rep.mean_i, rep.gt_mean_i, 1e-12);
  EXPECT_FALSE(rep.no_motion);
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.epe, 0.0);
    EXPECT_TRUE(row.mean_i.has_value());
  }
}

TEST(Evaluate, ShiftedPredictionEpe) {
  const auto traj = io::gen_synthetic(io::SceneKind::rotate, 100, 9, 3);
  auto shifted = traj;
  for (auto& f : shifted.frames) f.col(2).array() += 2e-4;
  ReplayDeformer replay(shifted);
  const auto sp = io::split(traj, {2, 1.0}, 0);
  EXPECT_NEAR(train::evaluate(replay, traj, sp).epe, 2.0, 1e-9);
  const auto other = io::gen_synthetic(io::SceneKind::rotate, 99, 9, 3);
  EXPECT_THROW(train::evaluate(replay, other, sp), InvalidArgument);
}
