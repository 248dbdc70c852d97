// SPDX-License-Identifier: Apache-2.0
//
// Spline deformation field.
//
// A spatial encoder queried at knot k maps canonical points to per-knot
// states (offset dx_k, tangent m_k [, acceleration a_k]). The knot position is
// x_c + dx_k, and any query time in [0, 1] is answered by the Hermite (or
// quintic) segment between the two enclosing knots.
//
// The coupled 4-D baseline is the exception: it feeds t as an input
// coordinate and predicts the offset at the query time directly. Its
// velocity and acceleration come from central differences in t.
#pragma once

#include "sdf/autodiff.hpp"
#include "sdf/checkpoint.hpp"
#include "sdf/encoders.hpp"
#include "sdf/spline.hpp"

#include <array>
#include <charconv>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace sdf {

enum class EncoderKind { siren_resfields, pe_resfields, triplanes, triaxes, coupled4d };

inline const char* encoder_name(EncoderKind k) {
  switch (k) {
    case EncoderKind::siren_resfields: return "siren-resfields";
    case EncoderKind::pe_resfields: return "pe-resfields";
    case EncoderKind::triplanes: return "triplanes";
    case EncoderKind::triaxes: return "triaxes";
    case EncoderKind::coupled4d: return "coupled4d-baseline";
  }
  return "?";
}

inline EncoderKind parse_encoder(const std::string& s) {
  for (auto k : {EncoderKind::siren_resfields, EncoderKind::pe_resfields, EncoderKind::triplanes,
                 EncoderKind::triaxes, EncoderKind::coupled4d})
    if (s == encoder_name(k)) return k;
  if (s == "coupled4d") return EncoderKind::coupled4d;
  throw InvalidArgument("unknown encoder variant: " + s);
}

struct FieldConfig {
  EncoderKind encoder = EncoderKind::siren_resfields;
  int n_knots = 2;
  int rank = 8;
  int hidden_layers = 3;
  int hidden_width = 64;
  double w0 = 10.0;
  enc::PositionalEncodingConfig pe{6, true};
  std::vector<int> grid_resolutions{32, 64};
  int grid_channels = 16;
  double grid_base_lo = 0.1;  // bases ~ U(grid_base_lo, grid_base_hi)
  double grid_base_hi = 0.5;
  double grid_init = 0.1;  // residual bases ~ U(-grid_init, grid_init)
  int decoder_width = 64;  // hidden width of the grid decoders
  bool quintic = false;

  void validate() const {
    if (n_knots < 2) throw InvalidArgument("FieldConfig: n_knots must be >= 2");
    if (rank < 0) throw InvalidArgument("FieldConfig: rank must be >= 0");
    if (hidden_layers < 1 || hidden_width < 1) throw InvalidArgument("FieldConfig: bad network shape");
    if (grid_channels < 1 || grid_resolutions.empty()) throw InvalidArgument("FieldConfig: bad grid shape");
    for (int d : grid_resolutions)
      if (d < 2) throw InvalidArgument("FieldConfig: grid resolution must be >= 2");
    if (!(w0 > 0.0)) throw InvalidArgument("FieldConfig: w0 must be positive");
    if (!(grid_base_lo <= grid_base_hi) || !(grid_init >= 0.0))
      throw InvalidArgument("FieldConfig: bad grid init range");
  }
};

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline void write_config(const FieldConfig& c, ckpt::KeyValues& kv) {
  kv["encoder"] = encoder_name(c.encoder);
  kv["n_knots"] = std::to_string(c.n_knots);
  kv["rank"] = std::to_string(c.rank);
  kv["hidden_layers"] = std::to_string(c.hidden_layers);
  kv["hidden_width"] = std::to_string(c.hidden_width);
  kv["w0"] = detail::format_double(c.w0);
  kv["pe_frequencies"] = std::to_string(c.pe.n_frequencies);
  kv["pe_include_input"] = c.pe.include_input ? "1" : "0";
  kv["grid_resolutions"] = detail::join_ints(c.grid_resolutions);
  kv["grid_channels"] = std::to_string(c.grid_channels);
  kv["grid_base_lo"] = detail::format_double(c.grid_base_lo);
  kv["grid_base_hi"] = detail::format_double(c.grid_base_hi);
  kv["grid_init"] = detail::format_double(c.grid_init);
  kv["decoder_width"] = std::to_string(c.decoder_width);
  kv["quintic"] = c.quintic ? "1" : "0";
}

inline FieldConfig read_config(const ckpt::KeyValues& kv) {
  auto get = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw InvalidArgument(std::string("field config: missing key ") + k);
    return it->second;
  };
  FieldConfig c;
  c.encoder = parse_encoder(get("encoder"));
  c.n_knots = std::stoi(get("n_knots"));
  c.rank = std::stoi(get("rank"));
  c.hidden_layers = std::stoi(get("hidden_layers"));
  c.hidden_width = std::stoi(get("hidden_width"));
  c.w0 = std::stod(get("w0"));
  c.pe.n_frequencies = std::stoi(get("pe_frequencies"));
  c.pe.include_input = get("pe_include_input") == "1";
  c.grid_resolutions = detail::split_ints(get("grid_resolutions"));
  c.grid_channels = std::stoi(get("grid_channels"));
  c.grid_base_lo = std::stod(get("grid_base_lo"));
  c.grid_base_hi = std::stod(get("grid_base_hi"));
  c.grid_init = std::stod(get("grid_init"));
  c.decoder_width = std::stoi(get("decoder_width"));
  c.quintic = get("quintic") == "1";
  c.validate();
  return c;
}

/// Maps canonical points into [-1, 1]^3: a cube centered on the bounding box,
/// with half-side equal to the largest half-extent (isotropic).
struct Normalizer {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;

  static Normalizer fit(const Matrix& points) {
    if (points.rows() < 1 || points.cols() != 3) throw InvalidArgument("Normalizer: need N x 3 points");
    const Vec3 lo = points.colwise().minCoeff().transpose();
    const Vec3 hi = points.colwise().maxCoeff().transpose();
    Normalizer n;
    n.center = 0.5 * (lo + hi);
    n.scale = std::max(0.5 * (hi - lo).maxCoeff(), 1e-12);
    return n;
  }

  Matrix apply(const Matrix& points) const {
    Matrix out = points;
    out.rowwise() -= center.transpose();
    return out / scale;
  }
};

enum class TimeUnits { segment, sequence };

struct KnotPrediction {
  Matrix delta_x;  // N_p x 3
  Matrix m;        // N_p x 3, per-segment time units
  Matrix a;        // N_p x 3 (quintic only, else empty)
};

class FieldPass;

class SplineField {
 public:
  SplineField(FieldConfig cfg, Normalizer norm, std::uint64_t seed)
      : cfg_(std::move(cfg)), norm_(norm), timeline_(cfg_.n_knots) {
    cfg_.validate();
    build();
    std::mt19937_64 rng(seed);
    initialize(rng);
  }

  SplineField(const SplineField&) = delete;
  SplineField& operator=(const SplineField&) = delete;

  const FieldConfig& config() const noexcept { return cfg_; }
  const Normalizer& normalizer() const noexcept { return norm_; }
  const spline::SplineTimeline& timeline() const noexcept { return timeline_; }
  ad::ParamStore& params() noexcept { return store_; }
  const ad::ParamStore& params() const noexcept { return store_; }
  bool coupled() const noexcept { return cfg_.encoder == EncoderKind::coupled4d; }

  /// Decoder output width: 6 (dx, m), 9 with quintic (dx, m, a), 3 coupled.
  int out_channels() const noexcept { return coupled() ? 3 : (cfg_.quintic ? 9 : 6); }

  const enc::TemporalCodes& codes() const noexcept { return codes_; }

  /// Features of normalized points at knot `knot` (spline variants).
  ad::Var encode(ad::Tape& tape, ad::Var xn, int knot) {
    if (coupled()) throw InvalidArgument("encode: coupled baseline has no knots");
    if (knot < 0 || knot >= cfg_.n_knots) throw InvalidArgument("encode: knot index out of range");
    ad::Var v = enc::materialize_code(tape, store_, codes_, knot);
    switch (cfg_.encoder) {
      case EncoderKind::siren_resfields:
        return enc::trunk_apply(store_, trunk_, xn, v);
      case EncoderKind::pe_resfields:
        return enc::trunk_apply(store_, trunk_, enc::positional_encode(xn, cfg_.pe), v);
      case EncoderKind::triplanes:
        return enc::triplane_encode(store_, planes_, xn, v);
      case EncoderKind::triaxes:
        return enc::triaxes_encode(store_, axes_, xn, v);
      case EncoderKind::coupled4d:
        break;
    }
    throw InvalidArgument("encode: unsupported encoder");
  }

  /// Raw decoder output (B x out_channels) at knot `knot`.
  ad::Var predict_knot(ad::Tape& tape, ad::Var xn, int knot) { return decode(tape, encode(tape, xn, knot)); }

  /// Offset of the coupled baseline at sequence time t (B x 3).
  ad::Var coupled_offset(ad::Tape& tape, ad::Var xn, double t) {
    if (!coupled()) throw InvalidArgument("coupled_offset: not a coupled field");
    Matrix tc = Matrix::Constant(xn.rows(), 1, 2.0 * t - 1.0);
    const std::array<ad::Var, 2> parts{xn, tape.constant(std::move(tc))};
    return decode(tape, enc::coupled4d_encode(store_, trunk_, ad::concat_cols(parts)));
  }

  // Non-differentiable conveniences over world-space canonical points.
  KnotPrediction predict_knot(const Matrix& points, int knot);
  Matrix deform(const Matrix& points, double t);
  Matrix velocity(const Matrix& points, double t, TimeUnits units = TimeUnits::segment);
  Matrix acceleration(const Matrix& points, double t, TimeUnits units = TimeUnits::segment);
  /// deform(t) + velocity(t) * dt, velocity in sequence-time units.
  Matrix advect(const Matrix& points, double from_t, double dt);

  // Checkpoints: header carries the config and normalizer.
  ckpt::Checkpoint to_checkpoint(const ckpt::KeyValues& extra = {}) const {
    ckpt::KeyValues kv = extra;
    kv["kind"] = "spline-field";
    write_config(cfg_, kv);
    kv["norm_center"] = detail::format_double(norm_.center.x()) + "," + detail::format_double(norm_.center.y()) +
                        "," + detail::format_double(norm_.center.z());
    kv["norm_scale"] = detail::format_double(norm_.scale);
    ckpt::Checkpoint c;
    c.header = ckpt::format_key_values(kv);
    ckpt::append_params(c, store_);
    return c;
  }

  static std::unique_ptr<SplineField> from_checkpoint(const ckpt::Checkpoint& c) {
    const auto kv = ckpt::parse_key_values(c.header);
    auto it = kv.find("kind");
    if (it == kv.end() || it->second != "spline-field") throw InvalidArgument("checkpoint is not a spline field");
    Normalizer n;
    std::stringstream ss(kv.at("norm_center"));
    std::string tok;
    for (int i = 0; i < 3 && std::getline(ss, tok, ','); ++i) n.center[i] = std::stod(tok);
    n.scale = std::stod(kv.at("norm_scale"));
    auto f = std::make_unique<SplineField>(read_config(kv), n, 0);
    ckpt::load_params(c, f->store_);
    return f;
  }

 private:
  void build() {
    const auto rank = static_cast<std::size_t>(cfg_.rank);
    const auto H = static_cast<std::size_t>(cfg_.hidden_width);
    const auto layers = static_cast<std::size_t>(cfg_.hidden_layers);
    const auto C = static_cast<std::size_t>(out_channels());
    if (!coupled()) codes_ = enc::make_codes(store_, "codes", cfg_.n_knots, cfg_.rank);
    switch (cfg_.encoder) {
      case EncoderKind::siren_resfields:
        trunk_ = enc::make_trunk(store_, "trunk", 3, H, layers, rank, ad::Activation::sine(cfg_.w0));
        decoder_.push_back(enc::make_tv_linear(store_, "decoder.out", H, C, 0));
        break;
      case EncoderKind::pe_resfields: {
        std::vector<std::size_t> skips;
        if (layers >= 4) skips.push_back(layers / 2);
        trunk_ = enc::make_trunk(store_, "trunk", static_cast<std::size_t>(cfg_.pe.width()), H, layers, rank,
                                 ad::Activation::relu(), skips);
        decoder_.push_back(enc::make_tv_linear(store_, "decoder.out", H, C, 0));
        break;
      }
      case EncoderKind::triplanes:
      case EncoderKind::triaxes: {
        const auto d = static_cast<std::size_t>(cfg_.grid_channels);
        if (cfg_.encoder == EncoderKind::triplanes)
          planes_ = enc::make_triplanes(store_, "planes", cfg_.grid_resolutions, d, rank);
        else
          axes_ = enc::make_triaxes(store_, "axes", cfg_.grid_resolutions, d, rank);
        const std::size_t F = d * cfg_.grid_resolutions.size();
        const auto Hd = static_cast<std::size_t>(cfg_.decoder_width);
        decoder_.push_back(enc::make_tv_linear(store_, "decoder.hidden", F, Hd, 0));
        decoder_.push_back(enc::make_tv_linear(store_, "decoder.out", Hd, C, 0));
        break;
      }
      case EncoderKind::coupled4d:
        trunk_ = enc::make_trunk(store_, "trunk", 4, H, layers, 0, ad::Activation::sine(cfg_.w0));
        decoder_.push_back(enc::make_tv_linear(store_, "decoder.out", H, C, 0));
        break;
    }
  }

  void initialize(std::mt19937_64& rng) {
    if (!coupled()) enc::init_codes(store_, codes_, rng);
    switch (cfg_.encoder) {
      case EncoderKind::siren_resfields:
      case EncoderKind::coupled4d:
        enc::init_siren(store_, trunk_, rng);
        break;
      case EncoderKind::pe_resfields:
        for (const auto& l : trunk_.layers) enc::init_uniform_fan_in(store_, l, rng);
        break;
      case EncoderKind::triplanes:
        for (const auto& lvl : planes_)
          for (const auto& p : lvl) {
            enc::init_uniform(store_, p.base, cfg_.grid_base_lo, cfg_.grid_base_hi, rng);
            enc::init_uniform(store_, p.res, -cfg_.grid_init, cfg_.grid_init, rng);
          }
        break;
      case EncoderKind::triaxes:
        for (const auto& lvl : axes_)
          for (const auto& a : lvl) {
            enc::init_uniform(store_, a.base, cfg_.grid_base_lo, cfg_.grid_base_hi, rng);
            enc::init_uniform(store_, a.res, -cfg_.grid_init, cfg_.grid_init, rng);
          }
        break;
    }
    for (std::size_t i = 0; i + 1 < decoder_.size(); ++i) enc::init_uniform_fan_in(store_, decoder_[i], rng);
    enc::init_zero(store_, decoder_.back());
  }

  ad::Var decode(ad::Tape& tape, ad::Var features) {
    ad::Var none = tape.constant(Matrix(1, 0));
    ad::Var h = features;
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      h = enc::tv_linear_apply(store_, decoder_[i], none, h);
      if (i + 1 < decoder_.size()) h = ad::activation(h, ad::Activation::relu());
    }
    return h;
  }

  FieldConfig cfg_;
  Normalizer norm_;
  spline::SplineTimeline timeline_;
  ad::ParamStore store_;
  enc::TemporalCodes codes_;
  enc::MlpTrunk trunk_;
  std::vector<enc::TriplaneLevel> planes_;
  std::vector<enc::TriaxesLevel> axes_;
  std::vector<enc::TimeVariantLinear> decoder_;
};

/// Forward evaluation of one field over one point batch on one tape.
/// Knot predictions are memoized for the lifetime of the pass; the pass is
/// invalid once the field's parameters change.
class FieldPass {
 public:
  /// Half-width of the time stencil used by the coupled baseline.
  static constexpr double kCoupledStep = 1e-3;

  FieldPass(SplineField& field, ad::Tape& tape, const Matrix& points)
      : field_(field), tape_(tape), version_(field.params().version()) {
    if (points.cols() != 3 || points.rows() < 1) throw InvalidArgument("FieldPass: need N x 3 points");
    if (!points.allFinite()) throw InvalidArgument("FieldPass: non-finite canonical point");
    x_ = tape.constant(points);
    xn_ = tape.constant(field.normalizer().apply(points));
  }

  SplineField& field() noexcept { return field_; }
  ad::Tape& tape() noexcept { return tape_; }
  ad::Var canonical() const noexcept { return x_; }

  /// Decoder output at knot k, memoized.
  ad::Var knot(int k) {
    check_version();
    auto it = cache_.find(k);
    if (it != cache_.end()) return it->second;
    ad::Var v = field_.predict_knot(tape_, xn_, k);
    cache_.emplace(k, v);
    return v;
  }

  std::size_t cached_knots() const noexcept { return cache_.size(); }

  ad::Var delta(int k) { return ad::slice_cols(knot(k), 0, 3); }
  ad::Var tangent(int k) { return ad::slice_cols(knot(k), 3, 3); }
  ad::Var knot_accel(int k) { return ad::slice_cols(knot(k), 6, 3); }
  ad::Var knot_position(int k) { return ad::add(x_, delta(k)); }

  ad::Var position(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("deform: t_query outside [0, 1]");
    if (field_.coupled()) return ad::add(x_, coupled_offset(t));
    return segment_combine(t, 0);
  }

  ad::Var velocity(double t, TimeUnits units = TimeUnits::segment) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("velocity: t_query outside [0, 1]");
    const double ts = field_.timeline().time_scale();
    if (field_.coupled()) {
      const double h = kCoupledStep;
      const double lo = std::max(0.0, t - h), hi = std::min(1.0, t + h);
      const std::array<ad::Var, 2> terms{coupled_offset(hi), coupled_offset(lo)};
      const double s = 1.0 / (hi - lo) / (units == TimeUnits::segment ? ts : 1.0);
      const std::array<double, 2> coeffs{s, -s};
      return ad::lincomb(terms, coeffs);
    }
    ad::Var v = segment_combine(t, 1);
    return units == TimeUnits::sequence ? ad::scale(v, ts) : v;
  }

  ad::Var acceleration(double t, TimeUnits units = TimeUnits::segment) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("acceleration: t_query outside [0, 1]");
    const double ts = field_.timeline().time_scale();
    if (field_.coupled()) {
      const double h = kCoupledStep;
      const double c = std::clamp(t, h, 1.0 - h);
      const std::array<ad::Var, 3> terms{coupled_offset(c + h), coupled_offset(c), coupled_offset(c - h)};
      const double s = 1.0 / (h * h) / (units == TimeUnits::segment ? ts * ts : 1.0);
      const std::array<double, 3> coeffs{s, -2.0 * s, s};
      return ad::lincomb(terms, coeffs);
    }
    ad::Var a = segment_combine(t, 2);
    return units == TimeUnits::sequence ? ad::scale(a, ts * ts) : a;
  }

 private:
  void check_version() const {
    if (field_.params().version() != version_)
      throw StateError("FieldPass: parameters changed since the pass was created");
  }

  ad::Var coupled_offset(double t) {
    check_version();
    return field_.coupled_offset(tape_, xn_, t);
  }

  // order 0: position, 1: d/dt_bar, 2: d2/dt_bar2.
  ad::Var segment_combine(double t, int order) {
    const auto q = spline::locate_segment(t, field_.timeline());
    if (field_.config().quintic) {
      const auto b = order == 0 ? spline::quintic_basis(q.t_bar)
                                : order == 1 ? spline::quintic_basis_d1(q.t_bar) : spline::quintic_basis_d2(q.t_bar);
      const std::array<ad::Var, 6> terms{knot_position(q.start_idx), tangent(q.start_idx), knot_accel(q.start_idx),
                                         knot_position(q.end_idx),   tangent(q.end_idx),   knot_accel(q.end_idx)};
      return ad::lincomb(terms, b);
    }
    const auto b = order == 0 ? spline::hermite_basis(q.t_bar)
                              : order == 1 ? spline::hermite_basis_d1(q.t_bar) : spline::hermite_basis_d2(q.t_bar);
    const std::array<ad::Var, 4> terms{knot_position(q.start_idx), tangent(q.start_idx), knot_position(q.end_idx),
                                       tangent(q.end_idx)};
    return ad::lincomb(terms, b);
  }

  SplineField& field_;
  ad::Tape& tape_;
  std::uint64_t version_;
  ad::Var x_, xn_;
  std::map<int, ad::Var> cache_;
};

inline KnotPrediction SplineField::predict_knot(const Matrix& points, int knot) {
  if (coupled()) throw InvalidArgument("predict_knot: coupled baseline has no knots");
  ad::Tape tape;
  FieldPass pass(*this, tape, points);
  const Matrix& out = pass.knot(knot).value();
  KnotPrediction p;
  p.delta_x = out.leftCols(3);
  p.m = out.middleCols(3, 3);
  if (cfg_.quintic) p.a = out.middleCols(6, 3);
  return p;
}

inline Matrix SplineField::deform(const Matrix& points, double t) {
  ad::Tape tape;
  FieldPass pass(*this, tape, points);
  return pass.position(t).value();
}

inline Matrix SplineField::velocity(const Matrix& points, double t, TimeUnits units) {
  ad::Tape tape;
  FieldPass pass(*this, tape, points);
  return pass.velocity(t, units).value();
}

inline Matrix SplineField::acceleration(const Matrix& points, double t, TimeUnits units) {
  ad::Tape tape;
  FieldPass pass(*this, tape, points);
  return pass.acceleration(t, units).value();
}

inline Matrix SplineField::advect(const Matrix& points, double from_t, double dt) {
  if (!(dt >= 0.0)) throw InvalidArgument("advect: dt must be >= 0");
  ad::Tape tape;
  FieldPass pass(*this, tape, points);
  Matrix x = pass.position(from_t).value();
  if (dt > 0.0) x += dt * pass.velocity(from_t, TimeUnits::sequence).value();
  return x;
}

/// Parameter count of a configuration without keeping the field.
inline std::size_t parameter_count(const FieldConfig& cfg) {
  return SplineField(cfg, Normalizer{}, 0).params().total_count();
}

/// Hidden width for the coupled baseline whose parameter count is closest to
/// `budget` with the given depth.
inline int coupled_width_for_budget(std::size_t budget, int hidden_layers) {
  auto count = [&](long long w) {
    return 4 * w + w + (hidden_layers - 1) * (w * w + w) + 3 * w + 3;
  };
  int best = 1;
  long long best_err = -1;
  for (int w = 1; w <= 4096; ++w) {
    const long long err = std::llabs(count(w) - static_cast<long long>(budget));
    if (best_err < 0 || err < best_err) {
      best = w;
      best_err = err;
    }
  }
  return best;
}

}  // namespace sdf
