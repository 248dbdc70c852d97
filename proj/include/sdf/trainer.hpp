// SPDX-License-Identifier: Apache-2.0
//
// Adam, the fitting loop and the held-out evaluation protocol.
#pragma once

#include "sdf/dataio.hpp"
#include "sdf/field.hpp"
#include "sdf/losses.hpp"
#include "sdf/metrics.hpp"
#include "sdf/model.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace sdf::train {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Learning rate per parameter group, indexed by ParamGroup.
using GroupRates = std::array<double, 3>;

class Adam {
 public:
  explicit Adam(const ad::ParamStore& store, AdamConfig cfg = {})
      : cfg_(cfg), m_(store.total_count(), 0.0), v_(store.total_count(), 0.0) {}

  long long steps() const noexcept { return t_; }
  std::span<const double> first_moment() const noexcept { return m_; }
  std::span<const double> second_moment() const noexcept { return v_; }

  /// One bias-corrected update from the gradients currently in `store`.
  /// Throws NumericError, leaving parameters and moments untouched, if any
  /// gradient is non-finite.
  void step(ad::ParamStore& store, const GroupRates& lr) {
    if (store.total_count() != m_.size()) throw InvalidArgument("Adam: store size changed");
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto g = store.grads({i});
      for (std::size_t j = 0; j < g.size(); ++j)
        if (!std::isfinite(g[j])) {
          const auto& e = store.entry({i});
          throw NumericError(std::string("non-finite gradient in group '") + ad::group_name(e.group) +
                                 "' (parameter " + e.name + ")",
                             e.offset + j);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto values = store.all_values();
    const auto grads = store.all_grads();
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& e = store.entry({i});
      const double rate = lr[static_cast<std::size_t>(e.group)];
      for (std::size_t j = e.offset; j < e.offset + e.count; ++j) {
        const double g = grads[j];
        m_[j] = cfg_.beta1 * m_[j] + (1.0 - cfg_.beta1) * g;
        v_[j] = cfg_.beta2 * v_[j] + (1.0 - cfg_.beta2) * g * g;
        values[j] -= rate * (m_[j] / c1) / (std::sqrt(v_[j] / c2) + cfg_.eps);
      }
    }
    store.bump_version();
  }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  long long t_ = 0;
};

inline void adam_step(ad::ParamStore& store, Adam& opt, double lr) { opt.step(store, {lr, lr, lr}); }

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  FieldConfig field;                 // n_knots is overwritten by the knot policy
  std::optional<int> n_knots;        // explicit N; otherwise knot_count(T_train, K)
  int K = 2;
  loss::LossConfig loss;
  std::size_t steps = 2000;
  double lr = 1e-3;                  // MLP group
  double grid_lr_mult = 10.0;        // grid and temporal-code groups
  double lr_final_ratio = 0.01;      // exponential decay to lr * ratio at the last step
  std::size_t batch_points = 256;
  std::size_t batch_times = 4;
  std::size_t reg_anchors = 64;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  AdamConfig adam;

  void validate() const {
    field.validate();
    loss.validate();
    if (steps < 1) throw InvalidArgument("TrainConfig: steps must be >= 1");
    if (!(lr > 0.0) || !(grid_lr_mult > 0.0) || !(lr_final_ratio > 0.0))
      throw InvalidArgument("TrainConfig: learning rates must be positive");
    if (batch_points < 1 || batch_times < 1 || reg_anchors < 1)
      throw InvalidArgument("TrainConfig: batch sizes must be >= 1");
    if (n_knots && *n_knots < 2) throw InvalidArgument("TrainConfig: n_knots must be >= 2");
    if (K < 1) throw InvalidArgument("TrainConfig: K must be >= 1");
  }

  GroupRates rates(std::size_t step) const {
    const double frac = steps > 1 ? static_cast<double>(step) / static_cast<double>(steps - 1) : 0.0;
    const double base = lr * std::pow(lr_final_ratio, frac);
    return {base, base * grid_lr_mult, base * grid_lr_mult};
  }
};

inline void write_train_config(const TrainConfig& c, ckpt::KeyValues& kv) {
  write_config(c.field, kv);
  kv.erase("n_knots");
  if (c.n_knots) kv["n_knots"] = std::to_string(*c.n_knots);
  kv["K"] = std::to_string(c.K);
  kv["alpha"] = detail::format_double(c.loss.alpha);
  kv["beta"] = detail::format_double(c.loss.beta);
  kv["knn_k"] = std::to_string(c.loss.k);
  kv["accel_norm"] = c.loss.accel_norm == loss::AccelNorm::l1 ? "l1" : "l2";
  kv["steps"] = std::to_string(c.steps);
  kv["lr"] = detail::format_double(c.lr);
  kv["grid_lr_mult"] = detail::format_double(c.grid_lr_mult);
  kv["lr_final_ratio"] = detail::format_double(c.lr_final_ratio);
  kv["batch_points"] = std::to_string(c.batch_points);
  kv["batch_times"] = std::to_string(c.batch_times);
  kv["reg_anchors"] = std::to_string(c.reg_anchors);
  kv["seed"] = std::to_string(c.seed);
}

/// Applies keys present in `kv` on top of `c`. Unknown keys are rejected.
inline void apply_train_config(const ckpt::KeyValues& kv, TrainConfig& c) {
  for (const auto& [k, v] : kv) {
    try {
      if (k == "encoder") c.field.encoder = parse_encoder(v);
      else if (k == "rank") c.field.rank = std::stoi(v);
      else if (k == "hidden_layers") c.field.hidden_layers = std::stoi(v);
      else if (k == "hidden_width") c.field.hidden_width = std::stoi(v);
      else if (k == "w0") c.field.w0 = std::stod(v);
      else if (k == "pe_frequencies") c.field.pe.n_frequencies = std::stoi(v);
      else if (k == "pe_include_input") c.field.pe.include_input = v == "1";
      else if (k == "grid_resolutions") c.field.grid_resolutions = detail::split_ints(v);
      else if (k == "grid_channels") c.field.grid_channels = std::stoi(v);
      else if (k == "grid_init") c.field.grid_init = std::stod(v);
      else if (k == "grid_base_lo") c.field.grid_base_lo = std::stod(v);
      else if (k == "grid_base_hi") c.field.grid_base_hi = std::stod(v);
      else if (k == "decoder_width") c.field.decoder_width = std::stoi(v);
      else if (k == "quintic") c.field.quintic = v == "1";
      else if (k == "n_knots") c.n_knots = std::stoi(v);
      else if (k == "K") c.K = std::stoi(v);
      else if (k == "alpha") c.loss.alpha = std::stod(v);
      else if (k == "beta") c.loss.beta = std::stod(v);
      else if (k == "knn_k") c.loss.k = std::stoul(v);
      else if (k == "accel_norm") {
        if (v != "l1" && v != "l2") throw InvalidArgument("accel_norm must be l1 or l2");
        c.loss.accel_norm = v == "l1" ? loss::AccelNorm::l1 : loss::AccelNorm::l2;
      } else if (k == "steps") c.steps = std::stoul(v);
      else if (k == "lr") c.lr = std::stod(v);
      else if (k == "grid_lr_mult") c.grid_lr_mult = std::stod(v);
      else if (k == "lr_final_ratio") c.lr_final_ratio = std::stod(v);
      else if (k == "batch_points") c.batch_points = std::stoul(v);
      else if (k == "batch_times") c.batch_times = std::stoul(v);
      else if (k == "reg_anchors") c.reg_anchors = std::stoul(v);
      else if (k == "seed") c.seed = std::stoull(v);
      else throw InvalidArgument("unknown run config key: " + k);
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const InvalidArgument*>(&e)) throw;
      throw InvalidArgument("bad value for run config key " + k + ": " + v);
    }
  }
}

// ---------------------------------------------------------------------------
// Run log

struct StepRecord {
  std::size_t step = 0;
  double recon = 0.0, lv = 0.0, lacc = 0.0, total = 0.0;
  double wallclock_ms = 0.0;
};

struct RunLog {
  std::vector<std::pair<std::string, std::string>> meta;  // written as '#' lines
  std::vector<StepRecord> records;
  bool diverged = false;
  std::string message;

  /// CSV with '#'-prefixed metadata lines before the header. With
  /// `timing` off the wallclock column is written as 0 so reruns compare
  /// byte for byte.
  std::string to_csv(bool timing = true) const {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    for (const auto& [k, v] : meta) os << "# " << k << "=" << v << "\n";
    os << "step,recon,lv,lacc,total,wallclock_ms\n" << std::setprecision(10);
    for (const auto& r : records)
      os << r.step << ',' << r.recon << ',' << r.lv << ',' << r.lacc << ',' << r.total << ','
         << (timing ? r.wallclock_ms : 0.0) << '\n';
    return os.str();
  }

  std::optional<std::string> find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  std::unique_ptr<FieldDeformer> model;
  RunLog log;
};

namespace detail {

/// `count` distinct draws from [0, n) (all of them when count >= n).
inline std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t k = std::min(n, count);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + static_cast<std::size_t>(rng() % (n - i))]);
  idx.resize(k);
  return idx;
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline Matrix gather(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

}  // namespace detail

/// Number of knots the policy picks for a split.
inline int resolve_knots(const TrainConfig& cfg, const io::Split& split) {
  if (cfg.n_knots) return *cfg.n_knots;
  return spline::knot_count(static_cast<int>(split.train_frames.size()), cfg.K);
}

/// Per-step callback: (step, record). Returning false stops early.
using StepHook = std::function<bool(std::size_t, const StepRecord&)>;

/// Fits a field to `data` on the split's training frames. Frame 0 positions
/// are the canonical points. On divergence the returned model holds the
/// parameters from before the failing step and log.diverged is set.
inline TrainResult train(const TrajectorySet& data, const io::Split& split, TrainConfig cfg,
                         const StepHook& hook = {}) {
  data.validate();
  if (split.train_frames.size() < 2) throw InvalidArgument("train: need at least 2 training frames");
  if (split.supervised_points.empty()) throw InvalidArgument("train: no supervised points");
  for (auto f : split.train_frames)
    if (f >= data.n_frames()) throw InvalidArgument("train: frame index out of range");
  for (auto p : split.supervised_points)
    if (p >= data.n_points()) throw InvalidArgument("train: point index out of range");
  cfg.field.n_knots = resolve_knots(cfg, split);
  cfg.validate();

  const Matrix& canonical = data.frames[0];
  auto field = std::make_unique<SplineField>(cfg.field, Normalizer::fit(canonical), cfg.seed);
  ad::ParamStore& store = field->params();
  Adam opt(store, cfg.adam);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  const bool use_lv = cfg.loss.alpha > 0.0;
  const bool use_lacc = cfg.loss.beta > 0.0;
  std::optional<loss::NeighborGraph> graph;
  if (use_lv || use_lacc) graph = loss::build_knn(canonical, cfg.loss.k, cfg.threads);

  TrainResult res;
  res.log.meta = {{"encoder", encoder_name(cfg.field.encoder)},
                  {"n_knots", std::to_string(cfg.field.n_knots)},
                  {"train_frames", std::to_string(split.train_frames.size())},
                  {"supervised_points", std::to_string(split.supervised_points.size())},
                  {"parameters", std::to_string(store.total_count())},
                  {"seed", std::to_string(cfg.seed)}};
  const auto t0 = std::chrono::steady_clock::now();
  const double T1 = static_cast<double>(data.n_frames() - 1);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    store.zero_grad();
    ad::Tape tape;

    std::vector<std::size_t> pts = detail::sample_distinct(split.supervised_points.size(), cfg.batch_points, rng);
    for (auto& p : pts) p = split.supervised_points[p];
    std::vector<std::size_t> frames = detail::sample_distinct(split.train_frames.size(), cfg.batch_times, rng);
    std::sort(frames.begin(), frames.end());

    FieldPass pass(*field, tape, detail::gather(canonical, pts));
    std::vector<ad::Var> preds;
    Matrix target(static_cast<Eigen::Index>(pts.size() * frames.size()), 3);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const std::size_t f = split.train_frames[frames[i]];
      preds.push_back(pass.position(static_cast<double>(f) / T1));
      target.middleRows(static_cast<Eigen::Index>(i * pts.size()), static_cast<Eigen::Index>(pts.size())) =
          detail::gather(data.frames[f], pts);
    }
    ad::Var recon = loss::recon_loss_l1(ad::concat_rows(preds), target);

    StepRecord rec;
    rec.step = step;
    std::vector<ad::Var> terms{recon};
    std::vector<double> coeffs{1.0};
    if (graph) {
      const auto anchors = detail::sample_distinct(canonical.rows(), cfg.reg_anchors, rng);
      auto [local, rows] = loss::restrict_graph(*graph, anchors);
      const double t = detail::uniform01(rng);
      FieldPass reg(*field, tape, detail::gather(canonical, rows));
      if (use_lv) {
        ad::Var lv = loss::velocity_loss(reg.velocity(t), local);
        rec.lv = lv.value()(0, 0);
        terms.push_back(lv);
        coeffs.push_back(cfg.loss.alpha);
      }
      if (use_lacc) {
        ad::Var la = loss::acceleration_loss(reg.acceleration(t), cfg.loss.accel_norm);
        rec.lacc = la.value()(0, 0);
        terms.push_back(la);
        coeffs.push_back(cfg.loss.beta);
      }
    }
    ad::Var total = ad::lincomb(terms, coeffs);
    rec.recon = recon.value()(0, 0);
    rec.total = total.value()(0, 0);
    if (!std::isfinite(rec.total)) {
      res.log.diverged = true;
      res.log.message = "total loss is not finite at step " + std::to_string(step);
      break;
    }
    tape.backward(total);
    try {
      opt.step(store, cfg.rates(step));
    } catch (const NumericError& e) {
      res.log.diverged = true;
      res.log.message = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }
    rec.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.log.records.push_back(rec);
    if (hook && !hook(step, rec)) break;
  }
  res.model = std::make_unique<FieldDeformer>(std::move(field), canonical);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double epe = 0.0;                    // over test frames, times scale
  double mean_i = 0.0;                 // Moran's I of predicted motion at test frames
  double gt_mean_i = 0.0;              // same on the ground truth
  bool no_motion = true;
  std::vector<metrics::ReportRow> rows;  // one per test frame
};

/// Deforms every point to each test frame and scores it. The Moran's I row
/// for frame f uses the motion from frame f-1 to f.
inline EvalReport evaluate(Deformer& model, const TrajectorySet& gt, const io::Split& split,
                           std::size_t K = metrics::kDefaultNeighbors, double scale = 1e4, unsigned threads = 0) {
  gt.validate();
  if (model.n_points() != gt.n_points())
    throw InvalidArgument("evaluate: model has " + std::to_string(model.n_points()) + " points, data has " +
                          std::to_string(gt.n_points()));
  const double T1 = static_cast<double>(gt.n_frames() - 1);
  EvalReport rep;
  std::vector<double> epes, mis, gt_mis;
  std::map<std::size_t, Matrix> memo;
  auto pred = [&](std::size_t f) -> const Matrix& {
    auto it = memo.find(f);
    if (it == memo.end()) it = memo.emplace(f, model.deform(static_cast<double>(f) / T1)).first;
    return it->second;
  };
  for (std::size_t f : split.test_frames) {
    if (f >= gt.n_frames()) throw InvalidArgument("evaluate: frame index out of range");
    metrics::ReportRow row;
    row.frame_idx = f;
    row.n_points = gt.n_points();
    row.epe = scale * metrics::frame_epe(pred(f), gt.frames[f]);
    epes.push_back(row.epe);
    if (f >= 1) {
      const Matrix& prev = pred(f - 1);
      const auto s = metrics::morans_i_frame(prev, pred(f) - prev, K, threads);
      if (!s.skipped) {
        row.mean_i = s.mean_i;
        mis.push_back(s.mean_i);
      }
      const auto g = metrics::morans_i_frame(gt.frames[f - 1], gt.frames[f] - gt.frames[f - 1], K, threads);
      if (!g.skipped) gt_mis.push_back(g.mean_i);
    }
    rep.rows.push_back(row);
    // Frames are visited in ascending order; older memo entries are done.
    while (!memo.empty() && memo.begin()->first + 1 < f) memo.erase(memo.begin());
  }
  if (!epes.empty()) rep.epe = ad::reduce_sum(epes) / static_cast<double>(epes.size());
  rep.no_motion = mis.empty();
  if (!mis.empty()) rep.mean_i = ad::reduce_sum(mis) / static_cast<double>(mis.size());
  if (!gt_mis.empty()) rep.gt_mean_i = ad::reduce_sum(gt_mis) / static_cast<double>(gt_mis.size());
  return rep;
}

/// Mean |a| (Euclidean, sequence-time units) over all points at each time.
inline double mean_acceleration(FieldDeformer& model, const std::vector<double>& times) {
  std::vector<double> per;
  for (double t : times) {
    const Matrix a = model.acceleration(t);
    per.push_back(ad::reduce_sum(Matrix(a.rowwise().norm())) / static_cast<double>(a.rows()));
  }
  return ad::reduce_sum(per) / static_cast<double>(per.size());
}

}  // namespace sdf::train
