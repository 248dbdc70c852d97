// SPDX-License-Identifier: Apache-2.0
//
// Time-variant spatial encoders.
//
// Every time-variant component follows the same low-rank rule: the quantity
// used at knot t is base + sum_r v_t[r] * residual[r], where v_t is row t of
// the temporal code matrix V. Encoders are evaluated at integer knot indices
// only; continuous time is handled by the spline.
#pragma once

#include "sdf/autodiff.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace sdf::enc {

using ad::Activation;
using ad::ParamGroup;
using ad::ParamId;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Temporal codes

struct TemporalCodes {
  ParamId id;
  int n_knots = 0;
  int rank = 0;
};

inline TemporalCodes make_codes(ParamStore& store, const std::string& name, int n_knots, int rank) {
  if (n_knots < 1 || rank < 0) throw InvalidArgument("make_codes: invalid shape");
  return {store.add(name, {static_cast<std::size_t>(n_knots), static_cast<std::size_t>(rank)},
                    ParamGroup::codes),
          n_knots, rank};
}

/// V ~ N(0, sigma^2) with sigma = 1e-2.
inline void init_codes(ParamStore& store, const TemporalCodes& codes, std::mt19937_64& rng,
                       double sigma = 1e-2) {
  std::normal_distribution<double> dist(0.0, sigma);
  for (double& v : store.values(codes.id)) v = dist(rng);
}

inline std::vector<double> code_row(const ParamStore& store, const TemporalCodes& codes, int knot) {
  if (knot < 0 || knot >= codes.n_knots) throw InvalidArgument("code_row: knot index out of range");
  auto all = store.values(codes.id);
  const auto r = static_cast<std::size_t>(codes.rank);
  return {all.begin() + static_cast<std::ptrdiff_t>(knot * r),
          all.begin() + static_cast<std::ptrdiff_t>((knot + 1) * r)};
}

/// Row v_t of V as a (1 x rank) node; backward accumulates into that row.
inline Var materialize_code(Tape& tape, ParamStore& store, const TemporalCodes& codes, int knot) {
  if (knot < 0 || knot >= codes.n_knots)
    throw InvalidArgument("materialize_code: knot index out of range");
  const auto r = static_cast<std::size_t>(codes.rank);
  Matrix row(1, codes.rank);
  auto all = store.values(codes.id);
  for (std::size_t i = 0; i < r; ++i) row(0, static_cast<Eigen::Index>(i)) = all[knot * r + i];
  const ParamId id = codes.id;
  return tape.push(std::move(row), [&store, id, knot, r](Tape&, const Matrix& g) {
    auto gr = store.grads(id);
    for (std::size_t i = 0; i < r; ++i) gr[knot * r + i] += g(0, static_cast<Eigen::Index>(i));
  });
}

// ---------------------------------------------------------------------------
// Time-variant linear layer: out = in * (W_base + sum_r v[r] W_res[r]) + bias

struct TimeVariantLinear {
  ParamId w_base, w_res, bias;
  std::size_t in = 0, out = 0, rank = 0;
};

inline TimeVariantLinear make_tv_linear(ParamStore& store, const std::string& prefix, std::size_t in,
                                        std::size_t out, std::size_t rank) {
  TimeVariantLinear l;
  l.in = in;
  l.out = out;
  l.rank = rank;
  l.w_base = store.add(prefix + ".w_base", {in, out}, ParamGroup::mlp);
  l.w_res = store.add(prefix + ".w_res", {rank, in, out}, ParamGroup::mlp);
  l.bias = store.add(prefix + ".bias", {out}, ParamGroup::mlp);
  return l;
}

inline Matrix materialize_weight(const ParamStore& store, const TimeVariantLinear& l,
                                 std::span<const double> v) {
  if (v.size() != l.rank) throw InvalidArgument("materialize_weight: code length != rank");
  Matrix W = store.matrix(l.w_base, l.in, l.out);
  const auto res = store.values(l.w_res);
  const std::size_t block = l.in * l.out;
  for (std::size_t r = 0; r < l.rank; ++r) {
    Eigen::Map<const Matrix> R(res.data() + r * block, static_cast<Eigen::Index>(l.in),
                               static_cast<Eigen::Index>(l.out));
    W += v[r] * R;
  }
  return W;
}

/// Differentiable w.r.t. the input, W_base, W_res, bias, and v_t.
inline Var tv_linear_apply(ParamStore& store, const TimeVariantLinear& l, Var v_t, Var input) {
  if (static_cast<std::size_t>(input.cols()) != l.in)
    throw InvalidArgument("tv_linear_apply: input width mismatch");
  if (static_cast<std::size_t>(v_t.cols()) != l.rank || (l.rank > 0 && v_t.rows() != 1))
    throw InvalidArgument("tv_linear_apply: code length != rank");
  const Matrix& vv = v_t.value();
  std::vector<double> v(vv.data(), vv.data() + vv.size());
  Matrix W = materialize_weight(store, l, v);
  Matrix out = input.value() * W;
  out.rowwise() += store.matrix(l.bias, 1, l.out).row(0);
  return input.tape->push(std::move(out), [&store, l, v_t, input, W = std::move(W), v](Tape& t, const Matrix& g) {
    t.add_grad(input, g * W.transpose());
    const Matrix dW = t.value(input).transpose() * g;
    store.grad_matrix(l.w_base, l.in, l.out) += dW;
    store.grad_matrix(l.bias, 1, l.out) += g.colwise().sum();
    if (l.rank == 0) return;
    const auto res = store.values(l.w_res);
    auto res_grad = store.grads(l.w_res);
    const std::size_t block = l.in * l.out;
    Matrix dv(1, static_cast<Eigen::Index>(l.rank));
    for (std::size_t r = 0; r < l.rank; ++r) {
      Eigen::Map<const Matrix> R(res.data() + r * block, static_cast<Eigen::Index>(l.in),
                                 static_cast<Eigen::Index>(l.out));
      Eigen::Map<Matrix> dR(res_grad.data() + r * block, static_cast<Eigen::Index>(l.in),
                            static_cast<Eigen::Index>(l.out));
      dR += v[r] * dW;
      dv(0, static_cast<Eigen::Index>(r)) = R.cwiseProduct(dW).sum();
    }
    t.add_grad(v_t, dv);
  });
}

/// Lazy evaluation in * W_base + sum_r v[r] (in * W_res[r]) + bias, without
/// forming W(t). Forward only; used to cross-check materialization.
inline Matrix tv_linear_lazy(const ParamStore& store, const TimeVariantLinear& l, std::span<const double> v,
                             const Matrix& input) {
  Matrix out = input * store.matrix(l.w_base, l.in, l.out);
  const auto res = store.values(l.w_res);
  const std::size_t block = l.in * l.out;
  for (std::size_t r = 0; r < l.rank; ++r) {
    Eigen::Map<const Matrix> R(res.data() + r * block, static_cast<Eigen::Index>(l.in),
                               static_cast<Eigen::Index>(l.out));
    out += v[r] * (input * R);
  }
  out.rowwise() += store.matrix(l.bias, 1, l.out).row(0);
  return out;
}

// ---------------------------------------------------------------------------
// Sinusoidal positional encoding

struct PositionalEncodingConfig {
  int n_frequencies = 6;
  bool include_input = true;

  int width_per_coord() const { return 2 * n_frequencies + (include_input ? 1 : 0); }
  int width(int dims = 3) const { return dims * width_per_coord(); }
};

/// Per coordinate c: [c,] sin(2^l pi c), cos(2^l pi c) for l = 0..L-1.
inline Var positional_encode(Var x, const PositionalEncodingConfig& cfg) {
  const Eigen::Index dims = x.cols();
  const int per = cfg.width_per_coord();
  const Matrix& X = x.value();
  Matrix out(X.rows(), dims * per);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index d = 0; d < dims; ++d) {
      Eigen::Index col = d * per;
      const double c = X(i, d);
      if (cfg.include_input) out(i, col++) = c;
      double freq = std::numbers::pi;
      for (int l = 0; l < cfg.n_frequencies; ++l, freq *= 2.0) {
        out(i, col++) = std::sin(freq * c);
        out(i, col++) = std::cos(freq * c);
      }
    }
  }
  return x.tape->push(std::move(out), [x, cfg, per, dims](Tape& t, const Matrix& g) {
    const Matrix& X = t.value(x);
    Matrix dx = Matrix::Zero(X.rows(), dims);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      for (Eigen::Index d = 0; d < dims; ++d) {
        Eigen::Index col = d * per;
        const double c = X(i, d);
        double acc = 0.0;
        if (cfg.include_input) acc += g(i, col++);
        double freq = std::numbers::pi;
        for (int l = 0; l < cfg.n_frequencies; ++l, freq *= 2.0) {
          acc += g(i, col++) * freq * std::cos(freq * c);
          acc -= g(i, col++) * freq * std::sin(freq * c);
        }
        dx(i, d) = acc;
      }
    }
    t.add_grad(x, dx);
  });
}

// ---------------------------------------------------------------------------
// Grid sampling helpers (align-corners, clamp-to-edge)

struct LerpCoord {
  std::size_t i0 = 0;
  double frac = 0.0;
  double dfrac = 0.0;  // d frac / d coordinate, zero where clamped
};

/// Coordinate in [-1, 1] onto a resolution-D axis: g = (c + 1)/2 * (D - 1).
inline LerpCoord lerp_coord(double c, std::size_t D) {
  const double span = static_cast<double>(D - 1);
  const double g = 0.5 * (c + 1.0) * span;
  if (g <= 0.0) return {0, 0.0, 0.0};
  if (g >= span) return {D - 2, 1.0, 0.0};
  auto i0 = static_cast<std::size_t>(std::floor(g));
  i0 = std::min(i0, D - 2);
  return {i0, g - static_cast<double>(i0), 0.5 * span};
}

struct TimeVariantPlane {
  ParamId base, res;
  std::size_t resolution = 0, channels = 0, rank = 0;
  std::size_t cells() const { return resolution * resolution; }
};

struct TimeVariantAxis {
  ParamId base, res;
  std::size_t resolution = 0, channels = 0, rank = 0;
  std::size_t cells() const { return resolution; }
};

/// Plane coordinate pairs: XY, YZ, XZ.
inline constexpr std::array<std::array<int, 2>, 3> kPlaneAxes{{{0, 1}, {1, 2}, {0, 2}}};
inline constexpr std::array<const char*, 3> kPlaneNames{"xy", "yz", "xz"};
inline constexpr std::array<const char*, 3> kAxisNames{"x", "y", "z"};

using TriplaneLevel = std::array<TimeVariantPlane, 3>;
using TriaxesLevel = std::array<TimeVariantAxis, 3>;

inline std::vector<TriplaneLevel> make_triplanes(ParamStore& store, const std::string& prefix,
                                                 std::span<const int> resolutions, std::size_t channels,
                                                 std::size_t rank) {
  std::vector<TriplaneLevel> levels;
  for (std::size_t l = 0; l < resolutions.size(); ++l) {
    const auto D = static_cast<std::size_t>(resolutions[l]);
    if (D < 2) throw InvalidArgument("make_triplanes: resolution must be >= 2");
    TriplaneLevel lvl;
    for (int p = 0; p < 3; ++p) {
      const std::string n = prefix + ".l" + std::to_string(l) + "." + kPlaneNames[p];
      lvl[p].base = store.add(n + ".base", {D, D, channels}, ParamGroup::grid);
      lvl[p].res = store.add(n + ".res", {rank, D, D, channels}, ParamGroup::grid);
      lvl[p].resolution = D;
      lvl[p].channels = channels;
      lvl[p].rank = rank;
    }
    levels.push_back(lvl);
  }
  return levels;
}

inline std::vector<TriaxesLevel> make_triaxes(ParamStore& store, const std::string& prefix,
                                              std::span<const int> resolutions, std::size_t channels,
                                              std::size_t rank) {
  std::vector<TriaxesLevel> levels;
  for (std::size_t l = 0; l < resolutions.size(); ++l) {
    const auto D = static_cast<std::size_t>(resolutions[l]);
    if (D < 2) throw InvalidArgument("make_triaxes: resolution must be >= 2");
    TriaxesLevel lvl;
    for (int a = 0; a < 3; ++a) {
      const std::string n = prefix + ".l" + std::to_string(l) + "." + kAxisNames[a];
      lvl[a].base = store.add(n + ".base", {D, channels}, ParamGroup::grid);
      lvl[a].res = store.add(n + ".res", {rank, D, channels}, ParamGroup::grid);
      lvl[a].resolution = D;
      lvl[a].channels = channels;
      lvl[a].rank = rank;
    }
    levels.push_back(lvl);
  }
  return levels;
}

namespace detail {

// A bilinear (4 corners) or linear (2 corners) footprint of one point.
struct Footprint {
  std::array<std::size_t, 4> cell{};
  std::array<double, 4> w{};
  // d w / d coordinate, for the first and second sampled coordinate.
  std::array<double, 4> dw_a{}, dw_b{};
  int n = 0;
};

inline Footprint plane_footprint(double ua, double ub, std::size_t D) {
  const LerpCoord a = lerp_coord(ua, D), b = lerp_coord(ub, D);
  Footprint f;
  f.n = 4;
  const std::size_t i = a.i0, j = b.i0;
  f.cell = {j * D + i, j * D + i + 1, (j + 1) * D + i, (j + 1) * D + i + 1};
  const double fa = a.frac, fb = b.frac;
  f.w = {(1 - fa) * (1 - fb), fa * (1 - fb), (1 - fa) * fb, fa * fb};
  f.dw_a = {-(1 - fb) * a.dfrac, (1 - fb) * a.dfrac, -fb * a.dfrac, fb * a.dfrac};
  f.dw_b = {-(1 - fa) * b.dfrac, -fa * b.dfrac, (1 - fa) * b.dfrac, fa * b.dfrac};
  return f;
}

inline Footprint axis_footprint(double u, std::size_t D) {
  const LerpCoord a = lerp_coord(u, D);
  Footprint f;
  f.n = 2;
  f.cell = {a.i0, a.i0 + 1, 0, 0};
  f.w = {1 - a.frac, a.frac, 0, 0};
  f.dw_a = {-a.dfrac, a.dfrac, 0, 0};
  return f;
}

// Effective (time-materialized) value of one cell's channel vector.
inline void cell_value(std::span<const double> base, std::span<const double> res, std::size_t cells,
                       std::size_t channels, std::span<const double> v, std::size_t cell, double* out) {
  const double* b = base.data() + cell * channels;
  for (std::size_t c = 0; c < channels; ++c) out[c] = b[c];
  for (std::size_t r = 0; r < v.size(); ++r) {
    const double* rr = res.data() + (r * cells + cell) * channels;
    const double vr = v[r];
    for (std::size_t c = 0; c < channels; ++c) out[c] += vr * rr[c];
  }
}

struct GridComponent {
  ParamId base, res;
  std::size_t resolution, channels, cells;
  int axis_a, axis_b;  // axis_b < 0 for 1-D components
};

// Shared forward/backward for product-aggregated multi-level grids. Each level
// holds three components whose sampled features are multiplied elementwise;
// levels are concatenated along channels.
inline Var product_grid_encode(ParamStore& store, std::vector<std::array<GridComponent, 3>> levels, Var xyz,
                               Var v_t) {
  if (xyz.cols() != 3) throw InvalidArgument("grid encode: points must have 3 columns");
  const Matrix& X = xyz.value();
  if (!X.allFinite()) throw InvalidArgument("grid encode: non-finite coordinate");
  if (levels.empty()) throw InvalidArgument("grid encode: no levels");
  const std::size_t channels = levels[0][0].channels;
  const Matrix& vv = v_t.value();
  std::vector<double> v(vv.data(), vv.data() + vv.size());
  const Eigen::Index B = X.rows();
  const auto L = static_cast<Eigen::Index>(levels.size());
  const auto C = static_cast<Eigen::Index>(channels);

  auto footprint = [&](const GridComponent& g, Eigen::Index i) {
    return g.axis_b < 0 ? axis_footprint(X(i, g.axis_a), g.resolution)
                        : plane_footprint(X(i, g.axis_a), X(i, g.axis_b), g.resolution);
  };

  // Per-component sampled features, kept for the backward pass.
  std::vector<Matrix> sampled(static_cast<std::size_t>(L) * 3, Matrix::Zero(B, C));
  std::vector<double> tmp(channels);
  Matrix out(B, L * C);
  for (Eigen::Index l = 0; l < L; ++l) {
    for (int p = 0; p < 3; ++p) {
      const auto& g = levels[static_cast<std::size_t>(l)][p];
      const auto base = store.values(g.base), res = store.values(g.res);
      Matrix& S = sampled[static_cast<std::size_t>(l * 3 + p)];
      for (Eigen::Index i = 0; i < B; ++i) {
        const Footprint f = footprint(g, i);
        for (int k = 0; k < f.n; ++k) {
          if (f.w[k] == 0.0) continue;
          cell_value(base, res, g.cells, channels, v, f.cell[k], tmp.data());
          for (Eigen::Index c = 0; c < C; ++c) S(i, c) += f.w[k] * tmp[static_cast<std::size_t>(c)];
        }
      }
    }
    const auto s0 = static_cast<std::size_t>(l * 3);
    out.middleCols(l * C, C) = sampled[s0].cwiseProduct(sampled[s0 + 1]).cwiseProduct(sampled[s0 + 2]);
  }

  return xyz.tape->push(
      std::move(out), [&store, levels = std::move(levels), xyz, v_t, v, sampled = std::move(sampled), channels](
                          Tape& t, const Matrix& G) {
        const Matrix& X = t.value(xyz);
        const Eigen::Index B = X.rows();
        const auto C = static_cast<Eigen::Index>(channels);
        const std::size_t rank = v.size();
        Matrix dx = Matrix::Zero(B, 3);
        Matrix dv = Matrix::Zero(1, static_cast<Eigen::Index>(rank));
        std::vector<double> tmp(channels), gp(channels);
        for (std::size_t l = 0; l < levels.size(); ++l) {
          for (int p = 0; p < 3; ++p) {
            const auto& g = levels[l][p];
            const auto base = store.values(g.base), res = store.values(g.res);
            auto base_grad = store.grads(g.base), res_grad = store.grads(g.res);
            const Matrix& o1 = sampled[l * 3 + static_cast<std::size_t>((p + 1) % 3)];
            const Matrix& o2 = sampled[l * 3 + static_cast<std::size_t>((p + 2) % 3)];
            for (Eigen::Index i = 0; i < B; ++i) {
              for (Eigen::Index c = 0; c < C; ++c)
                gp[static_cast<std::size_t>(c)] =
                    G(i, static_cast<Eigen::Index>(l) * C + c) * o1(i, c) * o2(i, c);
              const Footprint f = g.axis_b < 0 ? axis_footprint(X(i, g.axis_a), g.resolution)
                                               : plane_footprint(X(i, g.axis_a), X(i, g.axis_b), g.resolution);
              for (int k = 0; k < f.n; ++k) {
                const std::size_t cell = f.cell[k];
                const double w = f.w[k];
                if (w != 0.0) {
                  double* bg = base_grad.data() + cell * channels;
                  for (std::size_t c = 0; c < channels; ++c) bg[c] += w * gp[c];
                  for (std::size_t r = 0; r < rank; ++r) {
                    double* rg = res_grad.data() + (r * g.cells + cell) * channels;
                    const double* rv = res.data() + (r * g.cells + cell) * channels;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < channels; ++c) {
                      rg[c] += v[r] * w * gp[c];
                      acc += rv[c] * gp[c];
                    }
                    dv(0, static_cast<Eigen::Index>(r)) += w * acc;
                  }
                }
                if (f.dw_a[k] != 0.0 || f.dw_b[k] != 0.0) {
                  cell_value(base, res, g.cells, channels, v, cell, tmp.data());
                  double dot = 0.0;
                  for (std::size_t c = 0; c < channels; ++c) dot += tmp[c] * gp[c];
                  dx(i, g.axis_a) += f.dw_a[k] * dot;
                  if (g.axis_b >= 0) dx(i, g.axis_b) += f.dw_b[k] * dot;
                }
              }
            }
          }
        }
        t.add_grad(xyz, dx);
        if (rank > 0) t.add_grad(v_t, dv);
      });
}

}  // namespace detail

inline Var triplane_encode(ParamStore& store, const std::vector<TriplaneLevel>& planes, Var xyz, Var v_t) {
  std::vector<std::array<detail::GridComponent, 3>> comps;
  for (const auto& lvl : planes) {
    std::array<detail::GridComponent, 3> c;
    for (int p = 0; p < 3; ++p) {
      if (static_cast<std::size_t>(v_t.cols()) != lvl[p].rank)
        throw InvalidArgument("triplane_encode: code length != rank");
      c[p] = {lvl[p].base, lvl[p].res, lvl[p].resolution, lvl[p].channels, lvl[p].cells(),
              kPlaneAxes[p][0], kPlaneAxes[p][1]};
    }
    comps.push_back(c);
  }
  return detail::product_grid_encode(store, std::move(comps), xyz, v_t);
}

inline Var triaxes_encode(ParamStore& store, const std::vector<TriaxesLevel>& axes, Var xyz, Var v_t) {
  std::vector<std::array<detail::GridComponent, 3>> comps;
  for (const auto& lvl : axes) {
    std::array<detail::GridComponent, 3> c;
    for (int a = 0; a < 3; ++a) {
      if (static_cast<std::size_t>(v_t.cols()) != lvl[a].rank)
        throw InvalidArgument("triaxes_encode: code length != rank");
      c[a] = {lvl[a].base, lvl[a].res, lvl[a].resolution, lvl[a].channels, lvl[a].cells(), a, -1};
    }
    comps.push_back(c);
  }
  return detail::product_grid_encode(store, std::move(comps), xyz, v_t);
}

/// P(t) = P_base + sum_r v[r] P_res[r], as (cells x channels).
template <class Component>
Matrix materialize_grid(const ParamStore& store, const Component& g, std::span<const double> v) {
  if (v.size() != g.rank) throw InvalidArgument("materialize_grid: code length != rank");
  Matrix P = store.matrix(g.base, g.cells(), g.channels);
  const auto res = store.values(g.res);
  for (std::size_t r = 0; r < g.rank; ++r) {
    Eigen::Map<const Matrix> R(res.data() + r * g.cells() * g.channels, static_cast<Eigen::Index>(g.cells()),
                               static_cast<Eigen::Index>(g.channels));
    P += v[r] * R;
  }
  return P;
}

// ---------------------------------------------------------------------------
// MLP trunks

struct MlpTrunk {
  std::vector<TimeVariantLinear> layers;
  Activation act;
  /// Layer indices whose input is concatenated with the trunk input.
  std::vector<std::size_t> skips;
};

inline bool is_skip(const MlpTrunk& m, std::size_t layer) {
  return std::find(m.skips.begin(), m.skips.end(), layer) != m.skips.end();
}

/// `time_variant` selects which layers carry residual weights.
inline MlpTrunk make_trunk(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t width,
                           std::size_t n_layers, std::size_t rank, Activation act,
                           std::vector<std::size_t> skips = {}) {
  MlpTrunk m;
  m.act = act;
  m.skips = std::move(skips);
  std::size_t cur = in;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::size_t lin = cur + (i > 0 && is_skip(m, i) ? in : 0);
    m.layers.push_back(make_tv_linear(store, prefix + "." + std::to_string(i), lin, width, rank));
    cur = width;
  }
  return m;
}

inline Var trunk_apply(ParamStore& store, const MlpTrunk& m, Var input, Var v_t) {
  Var h = input;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (i > 0 && is_skip(m, i)) {
      const std::array<Var, 2> parts{h, input};
      h = ad::concat_cols(parts);
    }
    h = ad::activation(tv_linear_apply(store, m.layers[i], v_t, h), m.act);
  }
  return h;
}

/// SIREN initialization: first layer U(-1/in, 1/in), later layers
/// U(-sqrt(6/in)/w0, sqrt(6/in)/w0). Residual weights use the same law.
/// Biases follow U(-1/sqrt(in), 1/sqrt(in)).
inline void init_siren(ParamStore& store, const MlpTrunk& m, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    const double fan = static_cast<double>(l.in);
    const double bound = i == 0 ? 1.0 / fan : std::sqrt(6.0 / fan) / m.act.w0;
    std::uniform_real_distribution<double> w(-bound, bound);
    for (double& x : store.values(l.w_base)) x = w(rng);
    for (double& x : store.values(l.w_res)) x = w(rng);
    std::uniform_real_distribution<double> b(-1.0 / std::sqrt(fan), 1.0 / std::sqrt(fan));
    for (double& x : store.values(l.bias)) x = b(rng);
  }
}

/// U(-1/sqrt(in), 1/sqrt(in)) for weights, residuals and biases.
inline void init_uniform_fan_in(ParamStore& store, const TimeVariantLinear& l, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
  std::uniform_real_distribution<double> d(-bound, bound);
  for (double& x : store.values(l.w_base)) x = d(rng);
  for (double& x : store.values(l.w_res)) x = d(rng);
  for (double& x : store.values(l.bias)) x = d(rng);
}

inline void init_zero(ParamStore& store, const TimeVariantLinear& l) {
  for (ParamId id : {l.w_base, l.w_res, l.bias})
    for (double& x : store.values(id)) x = 0.0;
}

inline void init_uniform(ParamStore& store, ParamId id, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& x : store.values(id)) x = d(rng);
}

/// Coupled 4-D baseline: t enters the first layer as a fourth coordinate.
inline Var coupled4d_encode(ParamStore& store, const MlpTrunk& m, Var xyzt) {
  if (xyzt.cols() != 4) throw InvalidArgument("coupled4d_encode: expected 4 input columns");
  if (!m.layers.empty() && m.layers[0].rank != 0)
    throw InvalidArgument("coupled4d_encode: trunk must be time-invariant");
  Var no_code = xyzt.tape->constant(Matrix(1, 0));
  return trunk_apply(store, m, xyzt, no_code);
}

}  // namespace sdf::enc
