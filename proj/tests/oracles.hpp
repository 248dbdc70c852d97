// SPDX-License-Identifier: Apache-2.0
//
// Slow, obviously-correct reference implementations used only by tests.
#pragma once

#include "sdf/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <utility>
#include <vector>

namespace oracle {

using sdf::Matrix;
using sdf::Vec3;

/// Cubic Hermite segment through its Bezier control points, evaluated by
/// de Casteljau.
inline Vec3 hermite_bezier(double t, const Vec3& p0, const Vec3& m0, const Vec3& p1, const Vec3& m1) {
  std::array<Vec3, 4> c{p0, p0 + m0 / 3.0, p1 - m1 / 3.0, p1};
  for (int level = 3; level > 0; --level)
    for (int i = 0; i < level; ++i) c[i] = (1.0 - t) * c[i] + t * c[i + 1];
  return c[0];
}

/// Central difference of a vector-valued function of one variable.
inline Vec3 central_diff(const std::function<Vec3(double)>& f, double x, double eps) {
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

/// k nearest (distance, index) pairs by exhaustive scan; ties by index.
inline std::vector<std::pair<double, std::size_t>> brute_knn(const Matrix& pts, const Vec3& q, std::size_t k,
                                                             std::size_t exclude = static_cast<std::size_t>(-1)) {
  std::vector<std::pair<double, std::size_t>> all;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    if (static_cast<std::size_t>(i) == exclude) continue;
    all.emplace_back((pts.row(i).transpose() - q).squaredNorm(), static_cast<std::size_t>(i));
  }
  std::sort(all.begin(), all.end());
  all.resize(std::min(k, all.size()));
  return all;
}

/// Local Moran's I over brute-force neighborhoods of K points (self
/// included), averaged over points with nonzero local motion.
inline double morans_i(const Matrix& x, const Matrix& v, std::size_t K) {
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto nb = brute_knn(x, x.row(i).transpose(), K);
    double energy = 0.0;
    for (const auto& [d, a] : nb) energy += v.row(static_cast<Eigen::Index>(a)).squaredNorm();
    if (energy < 1e-24) continue;
    double wsum = 0.0, cross = 0.0;
    for (const auto& [da, a] : nb)
      for (const auto& [db, b] : nb) {
        if (a == b) continue;
        const double dist = (x.row(static_cast<Eigen::Index>(a)) - x.row(static_cast<Eigen::Index>(b))).norm();
        const double w = 1.0 / std::max(dist, 1e-8);
        wsum += w;
        cross += w * v.row(static_cast<Eigen::Index>(a)).dot(v.row(static_cast<Eigen::Index>(b)));
      }
    sum += static_cast<double>(K) / wsum * cross / energy;
    ++n;
  }
  return sum / static_cast<double>(n);
}

/// Bilinear sample of a (D*D x C) grid, align-corners, clamp-to-edge, with
/// (a, b) in [-1, 1]; the a axis varies fastest (cell = ib * D + ia).
inline std::vector<double> bilinear(const Matrix& grid, std::size_t D, double a, double b) {
  auto to_grid = [&](double c) { return std::clamp(0.5 * (c + 1.0) * (D - 1.0), 0.0, D - 1.0); };
  const double ga = to_grid(a), gb = to_grid(b);
  std::vector<double> out(static_cast<std::size_t>(grid.cols()), 0.0);
  for (std::size_t ia = 0; ia < D; ++ia)
    for (std::size_t ib = 0; ib < D; ++ib) {
      // Tent weights: zero outside the enclosing cell.
      const double wa = std::max(0.0, 1.0 - std::abs(ga - static_cast<double>(ia)));
      const double wb = std::max(0.0, 1.0 - std::abs(gb - static_cast<double>(ib)));
      if (wa * wb == 0.0) continue;
      for (Eigen::Index c = 0; c < grid.cols(); ++c)
        out[static_cast<std::size_t>(c)] += wa * wb * grid(static_cast<Eigen::Index>(ib * D + ia), c);
    }
  return out;
}

inline std::vector<double> linear(const Matrix& grid, std::size_t D, double a) {
  const double g = std::clamp(0.5 * (a + 1.0) * (D - 1.0), 0.0, D - 1.0);
  std::vector<double> out(static_cast<std::size_t>(grid.cols()), 0.0);
  for (std::size_t i = 0; i < D; ++i) {
    const double w = std::max(0.0, 1.0 - std::abs(g - static_cast<double>(i)));
    for (Eigen::Index c = 0; c < grid.cols(); ++c)
      out[static_cast<std::size_t>(c)] += w * grid(static_cast<Eigen::Index>(i), c);
  }
  return out;
}

/// y = x W + b by explicit loops.
inline Matrix linear_layer(const Matrix& x, const Matrix& W, const Matrix& b) {
  Matrix y(x.rows(), W.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < W.cols(); ++j) {
      double s = b(0, j);
      for (Eigen::Index k = 0; k < x.cols(); ++k) s += x(i, k) * W(k, j);
      y(i, j) = s;
    }
  return y;
}

}  // namespace oracle
