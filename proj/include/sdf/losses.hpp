// SPDX-License-Identifier: Apache-2.0
//
// Reconstruction, velocity-coherence and acceleration losses.
#pragma once

#include "sdf/autodiff.hpp"
#include "sdf/knn.hpp"

#include <array>
#include <cmath>
#include <span>
#include <unordered_map>
#include <vector>

namespace sdf::loss {

using ad::Tape;
using ad::Var;

/// Per-row k-neighborhoods with inverse-distance weights that sum to one.
/// Row r describes the point at row self[r] of the velocity matrix; indices
/// refer to rows of that same matrix.
struct NeighborGraph {
  std::size_t k = 0;
  std::vector<std::size_t> self;
  std::vector<std::size_t> indices;  // rows() x k
  std::vector<double> weights;       // rows() x k

  std::size_t rows() const noexcept { return self.size(); }
  std::size_t neighbor(std::size_t r, std::size_t j) const { return indices[r * k + j]; }
  double weight(std::size_t r, std::size_t j) const { return weights[r * k + j]; }
};

inline constexpr double kDistanceFloor = 1e-8;

/// Exact k nearest neighbors (no self), w_ij proportional to 1/(d_ij + 1e-8).
inline NeighborGraph build_knn(const Matrix& points, std::size_t k, unsigned threads = 0) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k < 1) throw InvalidArgument("build_knn: k must be >= 1");
  if (n <= k) throw InvalidArgument("build_knn: need more points than neighbors");
  knn::KdTree tree(points);
  NeighborGraph g;
  g.k = k;
  g.self.resize(n);
  g.indices.resize(n * k);
  g.weights.resize(n * k);
  knn::parallel_for(n, threads, [&](std::size_t i) {
    g.self[i] = i;
    const auto nb = tree.query(points.row(static_cast<Eigen::Index>(i)).transpose(), k, i);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double w = 1.0 / (std::sqrt(nb[j].dist2) + kDistanceFloor);
      g.indices[i * k + j] = nb[j].index;
      g.weights[i * k + j] = w;
      total += w;
    }
    for (std::size_t j = 0; j < k; ++j) g.weights[i * k + j] /= total;
  });
  return g;
}

/// Restricts a full graph to `anchors`. Returns the restricted graph together
/// with the global point indices its rows refer to (anchors and their
/// neighbors, first-seen order).
inline std::pair<NeighborGraph, std::vector<std::size_t>> restrict_graph(const NeighborGraph& full,
                                                                        std::span<const std::size_t> anchors) {
  std::vector<std::size_t> rows;
  std::unordered_map<std::size_t, std::size_t> local;
  auto local_of = [&](std::size_t global) {
    auto [it, inserted] = local.try_emplace(global, rows.size());
    if (inserted) rows.push_back(global);
    return it->second;
  };
  NeighborGraph g;
  g.k = full.k;
  for (std::size_t a : anchors) {
    if (a >= full.rows()) throw InvalidArgument("restrict_graph: anchor out of range");
    g.self.push_back(local_of(a));
    for (std::size_t j = 0; j < full.k; ++j) {
      g.indices.push_back(local_of(full.neighbor(a, j)));
      g.weights.push_back(full.weight(a, j));
    }
  }
  return {std::move(g), std::move(rows)};
}

/// mean_r sum_j w_rj |v_self(r) - v_j|^2
inline Var velocity_loss(Var v, const NeighborGraph& g) {
  if (v.cols() != 3) throw InvalidArgument("velocity_loss: velocities must be N x 3");
  const Matrix& V = v.value();
  const std::size_t R = g.rows();
  if (R == 0) throw InvalidArgument("velocity_loss: empty graph");
  std::vector<double> terms(R * g.k);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < g.k; ++j)
      terms[r * g.k + j] = g.weight(r, j) * (V.row(static_cast<Eigen::Index>(g.self[r])) -
                                             V.row(static_cast<Eigen::Index>(g.neighbor(r, j))))
                                                .squaredNorm();
  Matrix out(1, 1);
  out(0, 0) = ad::reduce_sum(terms) / static_cast<double>(R);
  return v.tape->push(std::move(out), [v, g](Tape& t, const Matrix& grad) {
    const Matrix& V = t.value(v);
    Matrix dv = Matrix::Zero(V.rows(), V.cols());
    const double s = 2.0 * grad(0, 0) / static_cast<double>(g.rows());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const auto i = static_cast<Eigen::Index>(g.self[r]);
      for (std::size_t j = 0; j < g.k; ++j) {
        const auto n = static_cast<Eigen::Index>(g.neighbor(r, j));
        const Eigen::RowVector3d d = s * g.weight(r, j) * (V.row(i) - V.row(n));
        dv.row(i) += d;
        dv.row(n) -= d;
      }
    }
    t.add_grad(v, dv);
  });
}

enum class AccelNorm {
  l1,  // mean over points and components of |a|
  l2,  // mean over points of the Euclidean norm
};

inline Var acceleration_loss(Var a, AccelNorm norm = AccelNorm::l1) {
  const Matrix& A = a.value();
  if (A.size() == 0) throw InvalidArgument("acceleration_loss: empty input");
  if (!A.allFinite()) throw InvalidArgument("acceleration_loss: non-finite acceleration");
  Matrix out(1, 1);
  if (norm == AccelNorm::l1) {
    const Matrix absA = A.cwiseAbs();
    out(0, 0) = ad::reduce_sum(absA) / static_cast<double>(A.size());
    return a.tape->push(std::move(out), [a](Tape& t, const Matrix& g) {
      const Matrix& A = t.value(a);
      t.add_grad(a, (A.array().sign() * (g(0, 0) / static_cast<double>(A.size()))).matrix());
    });
  }
  const Matrix norms = A.rowwise().norm();
  out(0, 0) = ad::reduce_sum(norms) / static_cast<double>(A.rows());
  return a.tape->push(std::move(out), [a](Tape& t, const Matrix& g) {
    const Matrix& A = t.value(a);
    Matrix d = Matrix::Zero(A.rows(), A.cols());
    const double s = g(0, 0) / static_cast<double>(A.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      const double n = A.row(i).norm();
      if (n > 0.0) d.row(i) = s * A.row(i) / n;
    }
    t.add_grad(a, d);
  });
}

/// Mean absolute componentwise error against a constant target.
inline Var recon_loss_l1(Var pred, const Matrix& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw InvalidArgument("recon_loss_l1: shape mismatch");
  const Matrix diff = pred.value() - gt;
  Matrix out(1, 1);
  out(0, 0) = ad::reduce_sum(Matrix(diff.cwiseAbs())) / static_cast<double>(diff.size());
  return pred.tape->push(std::move(out), [pred, gt](Tape& t, const Matrix& g) {
    const Matrix d = t.value(pred) - gt;
    t.add_grad(pred, (d.array().sign() * (g(0, 0) / static_cast<double>(d.size()))).matrix());
  });
}

struct LossConfig {
  double alpha = 1.0;   // weight of the velocity loss
  double beta = 0.01;   // weight of the acceleration loss
  std::size_t k = 8;    // neighbors per point for the velocity loss
  AccelNorm accel_norm = AccelNorm::l1;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !std::isfinite(alpha) || !std::isfinite(beta))
      throw InvalidArgument("LossConfig: alpha and beta must be finite and >= 0");
    if (k < 1) throw InvalidArgument("LossConfig: k must be >= 1");
  }
};

inline double total_loss(double recon, double lv, double lacc, const LossConfig& cfg) {
  return recon + cfg.alpha * lv + cfg.beta * lacc;
}

inline Var total_loss(Var recon, Var lv, Var lacc, const LossConfig& cfg) {
  const std::array<Var, 3> terms{recon, lv, lacc};
  const std::array<double, 3> coeffs{1.0, cfg.alpha, cfg.beta};
  return ad::lincomb(terms, coeffs);
}

}  // namespace sdf::loss
