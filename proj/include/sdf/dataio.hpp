// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scenes, the SDFTRAJ1 trajectory format, train/test splits and
// PLY export.
//
// SDFTRAJ1 layout (little-endian):
//   magic "SDFTRAJ1" | u32 T | u32 N_p | f32 positions[T][N_p][3]
#pragma once

#include "sdf/checkpoint.hpp"
#include "sdf/trajectory.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace sdf::io {

enum class SceneKind { rigid_translate, rotate, bending_sheet, swing_arm, composite };

inline const char* scene_name(SceneKind k) {
  switch (k) {
    case SceneKind::rigid_translate: return "rigid-translate";
    case SceneKind::rotate: return "rotate";
    case SceneKind::bending_sheet: return "bending-sheet";
    case SceneKind::swing_arm: return "swing-arm";
    case SceneKind::composite: return "composite";
  }
  return "?";
}

inline SceneKind parse_scene(const std::string& s) {
  for (auto k : {SceneKind::rigid_translate, SceneKind::rotate, SceneKind::bending_sheet, SceneKind::swing_arm,
                 SceneKind::composite})
    if (s == scene_name(k)) return k;
  throw InvalidArgument("unknown synthetic kind: " + s);
}

/// A parametric motion over canonical points. at(t) is defined for any real
/// t, so it doubles as the analytic continuation past the sequence end.
class SyntheticScene {
 public:
  static constexpr double kSheetMaxCurvature = 1.2;
  static constexpr double kSheetFrequency = 1.0;
  static constexpr double kArmAmplitude = 0.6;

  inline static const Vec3 kTranslation{0.6, 0.3, -0.2};
  static constexpr double kRotationAngle = std::numbers::pi / 2.0;

  SyntheticScene(SceneKind kind, std::size_t n_points, std::uint64_t seed) : kind_(kind) {
    if (n_points < 10) throw InvalidArgument("gen_synthetic: need at least 10 points");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    params_ = Matrix(static_cast<Eigen::Index>(n_points), 3);
    for (Eigen::Index i = 0; i < params_.rows(); ++i)
      for (int c = 0; c < 3; ++c) params_(i, c) = u(rng);
    if (kind_ == SceneKind::rigid_translate || kind_ == SceneKind::rotate) params_ *= 0.5;
    // Sheets are thin in their third parameter.
    if (kind_ == SceneKind::bending_sheet || kind_ == SceneKind::composite) params_.col(2) *= 0.02;
  }

  SceneKind kind() const noexcept { return kind_; }
  std::size_t n_points() const noexcept { return static_cast<std::size_t>(params_.rows()); }

  Matrix at(double t) const {
    Matrix out(params_.rows(), 3);
    for (Eigen::Index i = 0; i < params_.rows(); ++i) out.row(i) = point(params_.row(i).transpose(), t).transpose();
    return out;
  }

  /// Analytic d/dt for the rigid kinds.
  std::optional<Matrix> velocity(double t) const {
    if (kind_ == SceneKind::rigid_translate) {
      Matrix v(params_.rows(), 3);
      v.rowwise() = kTranslation.transpose();
      return v;
    }
    if (kind_ == SceneKind::rotate) {
      const Matrix x = at(t);
      Matrix v(x.rows(), 3);
      v.col(0) = -kRotationAngle * x.col(1);
      v.col(1) = kRotationAngle * x.col(0);
      v.col(2).setZero();
      return v;
    }
    return std::nullopt;
  }

 private:
  static Vec3 rot_z(const Vec3& p, double a) {
    return {std::cos(a) * p.x() - std::sin(a) * p.y(), std::sin(a) * p.x() + std::cos(a) * p.y(), p.z()};
  }

  // Sheet over u in [-1, 1] clamped along its u = -1 edge and rolled into a
  // circular arc of curvature k about the y axis, arc length preserved; w is
  // the offset along the normal.
  static Vec3 bend(double u, double v, double w, double k) {
    if (std::abs(k) < 1e-9) return {u, v, w};
    const double a = k * (u + 1.0);
    const double r = 1.0 / k - w;
    return {r * std::sin(a) - 1.0, v, 1.0 / k - r * std::cos(a)};
  }

  Vec3 point(const Vec3& p, double t) const {
    switch (kind_) {
      case SceneKind::rigid_translate:
        return p + kTranslation * t;
      case SceneKind::rotate:
        return rot_z(p, kRotationAngle * t);
      case SceneKind::bending_sheet: {
        const double k = kSheetMaxCurvature * std::sin(2.0 * std::numbers::pi * kSheetFrequency * t);
        return bend(p.x(), 0.5 * p.y(), p.z(), k);
      }
      case SceneKind::swing_arm: {
        // Two rigid links of length 1 along x, jointed at x = 0 and x = 1.
        const double s = 0.5 * (p.x() + 1.0) * 2.0;  // position along the arm in [0, 2]
        const Vec3 local{s, 0.1 * p.y(), 0.1 * p.z()};
        const double a1 = kArmAmplitude * std::sin(2.0 * std::numbers::pi * t);
        const double a2 = kArmAmplitude * std::sin(2.0 * std::numbers::pi * t + 1.0);
        if (s <= 1.0) return rot_z(local, a1);
        const Vec3 joint = rot_z({1.0, 0.0, 0.0}, a1);
        return joint + rot_z(local - Vec3{1.0, 0.0, 0.0}, a1 + a2);
      }
      case SceneKind::composite: {
        const double k = 0.5 * kSheetMaxCurvature * std::sin(2.0 * std::numbers::pi * t);
        const Vec3 b = bend(p.x(), 0.5 * p.y(), p.z(), k);
        return rot_z(b, 0.25 * std::numbers::pi * t) + Vec3{0.3, -0.2, 0.1} * t;
      }
    }
    return p;
  }

  SceneKind kind_;
  Matrix params_;
};

inline TrajectorySet gen_synthetic(SceneKind kind, std::size_t n_points, std::size_t T, std::uint64_t seed) {
  if (T < 4) throw InvalidArgument("gen_synthetic: need at least 4 frames");
  const SyntheticScene scene(kind, n_points, seed);
  TrajectorySet out;
  for (std::size_t f = 0; f < T; ++f) out.frames.push_back(scene.at(static_cast<double>(f) / static_cast<double>(T - 1)));
  return out;
}

/// Gaussian noise of standard deviation sigma on every coordinate.
inline TrajectorySet add_noise(const TrajectorySet& traj, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("add_noise: sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  TrajectorySet out = traj;
  if (sigma == 0.0) return out;
  for (auto& f : out.frames)
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] += n(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  std::size_t stride = 4;
  double supervised_fraction = 1.0;

  void validate() const {
    if (stride < 1) throw InvalidArgument("SplitSpec: stride must be >= 1");
    if (!(supervised_fraction > 0.0 && supervised_fraction <= 1.0))
      throw InvalidArgument("SplitSpec: supervised_fraction must be in (0, 1]");
  }
};

struct Split {
  std::vector<std::size_t> train_frames;
  std::vector<std::size_t> test_frames;
  std::vector<std::size_t> supervised_points;  // ascending
  std::string warning;                          // empty unless something is off
};

inline Split split(const TrajectorySet& traj, const SplitSpec& spec, std::uint64_t seed) {
  spec.validate();
  Split s;
  const std::size_t T = traj.n_frames();
  for (std::size_t f = 0; f < T; ++f) (f % spec.stride == 0 ? s.train_frames : s.test_frames).push_back(f);
  if (s.train_frames.size() < 2) throw InvalidArgument("split: fewer than 2 training frames");
  if (s.test_frames.empty()) s.warning = "stride 1 leaves no test frames";

  const std::size_t n = traj.n_points();
  const auto want = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(spec.supervised_fraction * static_cast<double>(n))), 1, n);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates with an explicit draw so results do not depend on
  // the standard library's shuffle.
  for (std::size_t i = 0; i < want; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(all[i], all[j]);
  }
  s.supervised_points.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(want));
  std::sort(s.supervised_points.begin(), s.supervised_points.end());
  return s;
}

// ---------------------------------------------------------------------------
// SDFTRAJ1

inline constexpr char kTrajMagic[8] = {'S', 'D', 'F', 'T', 'R', 'A', 'J', '1'};
inline constexpr std::uint64_t kTrajHeaderBytes = 16;
inline constexpr std::uint64_t kMaxTrajValues = std::uint64_t{1} << 34;

inline std::string encode_traj(const TrajectorySet& traj) {
  traj.validate();
  std::string out(kTrajMagic, kTrajMagic + 8);
  ckpt::detail::put_u32(out, static_cast<std::uint32_t>(traj.n_frames()));
  ckpt::detail::put_u32(out, static_cast<std::uint32_t>(traj.n_points()));
  out.reserve(kTrajHeaderBytes + 12 * traj.n_frames() * traj.n_points());
  for (const auto& f : traj.frames)
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      for (int c = 0; c < 3; ++c) ckpt::detail::put_f32(out, static_cast<float>(f(i, c)));
  return out;
}

inline TrajectorySet decode_traj(std::string bytes) {
  const std::uint64_t size = bytes.size();
  ckpt::detail::Reader r(std::move(bytes));
  if (r.str(8, "magic") != std::string(kTrajMagic, 8)) throw FormatError("bad magic, expected SDFTRAJ1", 0);
  const std::uint32_t T = r.u32("frame count");
  const std::uint32_t N = r.u32("point count");
  if (T < 2) throw FormatError("frame count must be >= 2", 8);
  if (N < 1) throw FormatError("point count must be >= 1", 12);
  const std::uint64_t values = std::uint64_t{T} * N * 3;
  if (values > kMaxTrajValues) throw FormatError("dimensions overflow", 8);
  if (size < kTrajHeaderBytes + 4 * values) throw FormatError("truncated payload", size);
  if (size > kTrajHeaderBytes + 4 * values) throw FormatError("trailing bytes", kTrajHeaderBytes + 4 * values);
  TrajectorySet out;
  out.frames.reserve(T);
  for (std::uint32_t t = 0; t < T; ++t) {
    Matrix f(N, 3);
    for (std::uint32_t i = 0; i < N; ++i)
      for (int c = 0; c < 3; ++c) {
        const std::uint64_t at = r.pos();
        const float v = r.f32("position");
        if (!std::isfinite(v)) throw FormatError("non-finite position", at);
        f(i, c) = v;
      }
    out.frames.push_back(std::move(f));
  }
  return out;
}

inline void write_traj(const TrajectorySet& traj, const std::string& path) {
  ckpt::detail::write_file(path, encode_traj(traj));
}

inline TrajectorySet read_traj(const std::string& path) { return decode_traj(ckpt::detail::read_file(path)); }

// ---------------------------------------------------------------------------
// PLY

using Rgb = std::array<std::uint8_t, 3>;

inline void write_ply(std::ostream& os, const Matrix& points, const std::vector<Rgb>* colors) {
  if (points.cols() != 3) throw InvalidArgument("export_ply: points must be N x 3");
  if (!points.allFinite()) throw InvalidArgument("export_ply: non-finite point");
  if (colors && colors->size() != static_cast<std::size_t>(points.rows()))
    throw InvalidArgument("export_ply: one color per point required");
  os.imbue(std::locale::classic());
  os << "ply\nformat ascii 1.0\nelement vertex " << points.rows() << "\n"
     << "property float x\nproperty float y\nproperty float z\n";
  if (colors) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "end_header\n";
  os << std::setprecision(9);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    os << points(i, 0) << ' ' << points(i, 1) << ' ' << points(i, 2);
    if (colors) {
      const auto& c = (*colors)[static_cast<std::size_t>(i)];
      os << ' ' << int(c[0]) << ' ' << int(c[1]) << ' ' << int(c[2]);
    }
    os << '\n';
  }
}

inline void export_ply(const Matrix& points, const std::vector<Rgb>* colors, const std::string& path) {
  std::ostringstream os;
  write_ply(os, points, colors);
  ckpt::detail::write_file(path, os.str());
}

/// Colors by speed: gray at rest, blending to red at `max_speed` and above.
/// Hue follows the direction in the xy plane so coherent regions read as a
/// single color.
inline std::vector<Rgb> velocity_colors(const Matrix& velocity, double max_speed) {
  if (velocity.cols() != 3) throw InvalidArgument("velocity_colors: need N x 3 velocities");
  std::vector<Rgb> out(static_cast<std::size_t>(velocity.rows()));
  for (Eigen::Index i = 0; i < velocity.rows(); ++i) {
    const double speed = velocity.row(i).norm();
    const double s = max_speed > 0.0 ? std::clamp(speed / max_speed, 0.0, 1.0) : 0.0;
    const double hue = std::atan2(velocity(i, 1), velocity(i, 0));
    const std::array<double, 3> full{0.5 + 0.5 * std::cos(hue), 0.5 + 0.5 * std::cos(hue - 2.0944),
                                     0.5 + 0.5 * std::cos(hue + 2.0944)};
    for (int c = 0; c < 3; ++c) {
      const double v = (1.0 - s) * 128.0 + s * 255.0 * full[static_cast<std::size_t>(c)];
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
          static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

/// Minimal reader for the vertex positions of an ASCII PLY.
inline Matrix read_ply_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  in.imbue(std::locale::classic());
  std::string line;
  long long n = -1;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex ", 0) == 0) n = std::stoll(line.substr(15));
    if (line == "end_header") break;
  }
  if (n < 0) throw IoError("PLY without vertex element: " + path);
  Matrix out(n, 3);
  for (long long i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw IoError("PLY truncated: " + path);
    std::istringstream ls(line);
    ls.imbue(std::locale::classic());
    ls >> out(i, 0) >> out(i, 1) >> out(i, 2);
  }
  return out;
}

}  // namespace sdf::io
