// SPDX-License-Identifier: Apache-2.0
//
// End-point error and Moran's I coherence of frame-to-frame motion.
#pragma once

#include "sdf/autodiff.hpp"
#include "sdf/knn.hpp"
#include "sdf/trajectory.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sdf::metrics {

inline constexpr std::size_t kDefaultNeighbors = 10;
inline constexpr double kStaticThreshold = 1e-12;
inline constexpr double kWeightDistanceFloor = 1e-8;

struct MotionField {
  std::vector<Matrix> vectors;    // T-1 entries, v_t = x(t+1) - x(t)
  std::vector<Matrix> positions;  // T entries
};

inline MotionField motion_vectors(const TrajectorySet& traj) {
  if (traj.n_frames() < 2) throw InvalidArgument("motion_vectors: need at least 2 frames");
  MotionField m;
  m.positions = traj.frames;
  for (std::size_t t = 0; t + 1 < traj.n_frames(); ++t) m.vectors.push_back(traj.frames[t + 1] - traj.frames[t]);
  return m;
}

enum class MoranVariant {
  local,      // neighborhood-normalized, uncentered (default)
  classical,  // global, mean-centered
};

struct FrameScore {
  bool skipped = true;
  double mean_i = 0.0;
};

namespace detail {

inline double inv_distance(const Matrix& x, std::size_t a, std::size_t b) {
  const double d = (x.row(static_cast<Eigen::Index>(a)) - x.row(static_cast<Eigen::Index>(b))).norm();
  return 1.0 / std::max(d, kWeightDistanceFloor);
}

inline bool frame_is_static(const Matrix& vectors) {
  return vectors.rowwise().norm().maxCoeff() < kStaticThreshold;
}

}  // namespace detail

/// Local score per point i over the set S of its K nearest points (i
/// included):
///   I_i = K / sum_{a != b} w_ab * sum_{a != b} w_ab <v_a, v_b> / sum_a |v_a|^2
/// with w_ab = 1 / |x_a - x_b|. Returns the mean over points; neighborhoods
/// with no motion are left out, and a frame with no motion at all is skipped.
inline FrameScore morans_i_frame(const Matrix& positions, const Matrix& vectors,
                                 std::size_t K = kDefaultNeighbors, unsigned threads = 0) {
  const auto n = static_cast<std::size_t>(positions.rows());
  if (positions.cols() != 3 || vectors.rows() != positions.rows() || vectors.cols() != 3)
    throw InvalidArgument("morans_i_frame: shape mismatch");
  if (K < 2) throw InvalidArgument("morans_i_frame: K must be >= 2");
  if (n <= K) throw InvalidArgument("morans_i_frame: need more points than K");
  if (detail::frame_is_static(vectors)) return {};

  knn::KdTree tree(positions);
  std::vector<double> score(n, 0.0);
  std::vector<char> valid(n, 0);
  knn::parallel_for(n, threads, [&](std::size_t i) {
    const auto nb = tree.query(positions.row(static_cast<Eigen::Index>(i)).transpose(), K);
    double energy = 0.0;
    for (const auto& a : nb) energy += vectors.row(static_cast<Eigen::Index>(a.index)).squaredNorm();
    if (energy < kStaticThreshold * kStaticThreshold) return;
    double wsum = 0.0, cross = 0.0;
    for (std::size_t a = 0; a < nb.size(); ++a)
      for (std::size_t b = 0; b < nb.size(); ++b) {
        if (a == b) continue;
        const double w = detail::inv_distance(positions, nb[a].index, nb[b].index);
        wsum += w;
        cross += w * vectors.row(static_cast<Eigen::Index>(nb[a].index))
                         .dot(vectors.row(static_cast<Eigen::Index>(nb[b].index)));
      }
    score[i] = static_cast<double>(K) / wsum * cross / energy;
    valid[i] = 1;
  });
  std::vector<double> kept;
  for (std::size_t i = 0; i < n; ++i)
    if (valid[i]) kept.push_back(score[i]);
  if (kept.empty()) return {};
  return {false, ad::reduce_sum(kept) / static_cast<double>(kept.size())};
}

/// Global mean-centered Moran's I over the K-nearest-neighbor graph (self
/// excluded) with inverse-distance weights.
inline FrameScore morans_i_frame_classical(const Matrix& positions, const Matrix& vectors,
                                           std::size_t K = kDefaultNeighbors) {
  const auto n = static_cast<std::size_t>(positions.rows());
  if (vectors.rows() != positions.rows() || vectors.cols() != 3)
    throw InvalidArgument("morans_i_frame_classical: shape mismatch");
  if (n <= K) throw InvalidArgument("morans_i_frame_classical: need more points than K");
  const Eigen::RowVector3d mean = vectors.colwise().mean();
  const Matrix z = vectors.rowwise() - mean;
  const double energy = z.rowwise().squaredNorm().sum();
  if (energy < kStaticThreshold * kStaticThreshold) return {};
  knn::KdTree tree(positions);
  double wsum = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = tree.query(positions.row(static_cast<Eigen::Index>(i)).transpose(), K, i);
    for (const auto& j : nb) {
      const double w = detail::inv_distance(positions, i, j.index);
      wsum += w;
      cross += w * z.row(static_cast<Eigen::Index>(i)).dot(z.row(static_cast<Eigen::Index>(j.index)));
    }
  }
  return {false, static_cast<double>(n) / wsum * cross / energy};
}

struct CoherenceReport {
  std::vector<FrameScore> per_frame;  // one per motion vector frame
  double mean_i = 0.0;
  std::size_t k = kDefaultNeighbors;
  bool no_motion = true;  // every frame skipped
};

inline CoherenceReport morans_i_sequence(const TrajectorySet& traj, std::size_t K = kDefaultNeighbors,
                                         MoranVariant variant = MoranVariant::local, unsigned threads = 0) {
  const MotionField m = motion_vectors(traj);
  CoherenceReport rep;
  rep.k = K;
  std::vector<double> kept;
  for (std::size_t t = 0; t < m.vectors.size(); ++t) {
    const FrameScore s = variant == MoranVariant::local
                             ? morans_i_frame(m.positions[t], m.vectors[t], K, threads)
                             : morans_i_frame_classical(m.positions[t], m.vectors[t], K);
    rep.per_frame.push_back(s);
    if (!s.skipped) kept.push_back(s.mean_i);
  }
  rep.no_motion = kept.empty();
  if (!kept.empty()) rep.mean_i = ad::reduce_sum(kept) / static_cast<double>(kept.size());
  return rep;
}

/// Mean Euclidean distance per point for one frame.
inline double frame_epe(const Matrix& pred, const Matrix& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw InvalidArgument("epe: shape mismatch");
  const Matrix d = (pred - gt).rowwise().norm();
  return ad::reduce_sum(d) / static_cast<double>(d.rows());
}

/// Mean Euclidean distance over all (point, frame) pairs, times `scale`.
inline double epe(const TrajectorySet& pred, const TrajectorySet& gt, double scale = 1e4) {
  if (pred.n_frames() != gt.n_frames() || pred.n_points() != gt.n_points() || pred.n_frames() == 0)
    throw InvalidArgument("epe: shape mismatch");
  std::vector<double> per;
  for (std::size_t t = 0; t < pred.n_frames(); ++t) per.push_back(frame_epe(pred.frames[t], gt.frames[t]));
  return scale * ad::reduce_sum(per) / static_cast<double>(per.size());
}

// ---------------------------------------------------------------------------
// CSV report: frame_idx,mean_I,epe,n_points

struct ReportRow {
  std::size_t frame_idx = 0;
  std::optional<double> mean_i;  // written as "nan" when absent
  double epe = 0.0;
  std::size_t n_points = 0;
};

inline std::string format_report(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << "frame_idx,mean_I,epe,n_points\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.frame_idx << ',';
    if (r.mean_i)
      os << *r.mean_i;
    else
      os << "nan";
    os << ',' << r.epe << ',' << r.n_points << '\n';
  }
  return os.str();
}

inline void write_report(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << format_report(rows);
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace sdf::metrics
