// SPDX-License-Identifier: Apache-2.0
//
// Parameter-free spline math on a uniform knot timeline over [0, 1].
//
// Tangents (and quintic accelerations) are expressed per segment, i.e. as
// derivatives with respect to the normalized segment time t_bar. A derivative
// with respect to sequence time t is obtained by multiplying by (N - 1) per
// order of differentiation.
#pragma once

#include "sdf/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace sdf::spline {

/// Number of knots for T observed timestamps and DoF factor K (K * N = T),
/// never fewer than two.
inline int knot_count(int n_timestamps, int dof_factor) {
  if (n_timestamps < 2) throw InvalidArgument("knot_count: need at least 2 timestamps");
  if (dof_factor < 1) throw InvalidArgument("knot_count: K must be >= 1");
  return std::max(2, n_timestamps / dof_factor);
}

class SplineTimeline {
 public:
  explicit SplineTimeline(int n_knots) : n_knots_(n_knots) {
    if (n_knots < 2) throw InvalidArgument("SplineTimeline: n_knots must be >= 2");
    tau_ = 1.0 / static_cast<double>(n_knots - 1);
  }

  int n_knots() const noexcept { return n_knots_; }
  int n_segments() const noexcept { return n_knots_ - 1; }
  double tau() const noexcept { return tau_; }
  double knot_time(int k) const noexcept { return static_cast<double>(k) * tau_; }

  /// Scale from d/dt_bar to d/dt.
  double time_scale() const noexcept { return static_cast<double>(n_knots_ - 1); }

 private:
  int n_knots_;
  double tau_;
};

struct SegmentQuery {
  int start_idx = 0;
  int end_idx = 1;
  double t_bar = 0.0;
};

/// Unclamped segment lookup; t_bar leaves [0, 1] when t_query leaves [0, 1].
/// Used by the extrapolation paths only.
inline SegmentQuery locate_segment_unchecked(double t_query, const SplineTimeline& tl) {
  const int last = tl.n_knots() - 2;
  const auto raw = static_cast<long long>(std::floor(t_query / tl.tau()));
  const int start = static_cast<int>(std::clamp<long long>(raw, 0, last));
  return {start, start + 1, t_query * tl.time_scale() - static_cast<double>(start)};
}

inline SegmentQuery locate_segment(double t_query, const SplineTimeline& tl) {
  if (!(t_query >= 0.0 && t_query <= 1.0))
    throw InvalidArgument("locate_segment: t_query outside [0, 1]");
  SegmentQuery q = locate_segment_unchecked(t_query, tl);
  // floor(t/tau) and t*(N-1) can disagree by one ulp near knots.
  q.t_bar = std::clamp(q.t_bar, 0.0, 1.0);
  return q;
}

// Cubic Hermite basis, ordered (h00, h10, h01, h11) for (p0, m0, p1, m1).

inline std::array<double, 4> hermite_basis(double t) {
  const double t2 = t * t, t3 = t2 * t;
  return {2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t, -2 * t3 + 3 * t2, t3 - t2};
}

inline std::array<double, 4> hermite_basis_d1(double t) {
  const double t2 = t * t;
  return {6 * t2 - 6 * t, 3 * t2 - 4 * t + 1, -6 * t2 + 6 * t, 3 * t2 - 2 * t};
}

inline std::array<double, 4> hermite_basis_d2(double t) {
  return {12 * t - 6, 6 * t - 4, -12 * t + 6, 6 * t - 2};
}

// Quintic Hermite basis, ordered (p0, m0, a0, p1, m1, a1).

inline std::array<double, 6> quintic_basis(double t) {
  const double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
  return {-6 * t5 + 15 * t4 - 10 * t3 + 1,
          -3 * t5 + 8 * t4 - 6 * t3 + t,
          -0.5 * t5 + 1.5 * t4 - 1.5 * t3 + 0.5 * t2,
          6 * t5 - 15 * t4 + 10 * t3,
          -3 * t5 + 7 * t4 - 4 * t3,
          0.5 * t5 - t4 + 0.5 * t3};
}

inline std::array<double, 6> quintic_basis_d1(double t) {
  const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
  return {-30 * t4 + 60 * t3 - 30 * t2,
          -15 * t4 + 32 * t3 - 18 * t2 + 1,
          -2.5 * t4 + 6 * t3 - 4.5 * t2 + t,
          30 * t4 - 60 * t3 + 30 * t2,
          -15 * t4 + 28 * t3 - 12 * t2,
          2.5 * t4 - 4 * t3 + 1.5 * t2};
}

inline std::array<double, 6> quintic_basis_d2(double t) {
  const double t2 = t * t, t3 = t2 * t;
  return {-120 * t3 + 180 * t2 - 60 * t,
          -60 * t3 + 96 * t2 - 36 * t,
          -10 * t3 + 18 * t2 - 9 * t + 1,
          120 * t3 - 180 * t2 + 60 * t,
          -60 * t3 + 84 * t2 - 24 * t,
          10 * t3 - 12 * t2 + 3 * t};
}

struct HermiteState {
  Vec3 p0 = Vec3::Zero();
  Vec3 m0 = Vec3::Zero();
  Vec3 p1 = Vec3::Zero();
  Vec3 m1 = Vec3::Zero();
};

struct QuinticState {
  Vec3 p0 = Vec3::Zero();
  Vec3 m0 = Vec3::Zero();
  Vec3 a0 = Vec3::Zero();
  Vec3 p1 = Vec3::Zero();
  Vec3 m1 = Vec3::Zero();
  Vec3 a1 = Vec3::Zero();
};

namespace detail {
inline Vec3 combine(const std::array<double, 4>& h, const HermiteState& s) {
  return h[0] * s.p0 + h[1] * s.m0 + h[2] * s.p1 + h[3] * s.m1;
}
inline Vec3 combine(const std::array<double, 6>& q, const QuinticState& s) {
  return q[0] * s.p0 + q[1] * s.m0 + q[2] * s.a0 + q[3] * s.p1 + q[4] * s.m1 + q[5] * s.a1;
}
}  // namespace detail

inline Vec3 hermite_position(double t_bar, const HermiteState& s) {
  return detail::combine(hermite_basis(t_bar), s);
}
inline Vec3 hermite_velocity(double t_bar, const HermiteState& s) {
  return detail::combine(hermite_basis_d1(t_bar), s);
}
inline Vec3 hermite_acceleration(double t_bar, const HermiteState& s) {
  return detail::combine(hermite_basis_d2(t_bar), s);
}

inline Vec3 quintic_position(double t_bar, const QuinticState& s) {
  return detail::combine(quintic_basis(t_bar), s);
}
inline Vec3 quintic_velocity(double t_bar, const QuinticState& s) {
  return detail::combine(quintic_basis_d1(t_bar), s);
}
inline Vec3 quintic_acceleration(double t_bar, const QuinticState& s) {
  return detail::combine(quintic_basis_d2(t_bar), s);
}

}  // namespace sdf::spline
