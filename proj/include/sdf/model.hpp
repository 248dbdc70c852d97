// SPDX-License-Identifier: Apache-2.0
//
// Deformers: anything that maps a fixed set of canonical points to
// positions and velocities over t in [0, 1]. A fitted spline field is one;
// a replay of a stored trajectory is another.
#pragma once

#include "sdf/field.hpp"
#include "sdf/trajectory.hpp"

#include <memory>
#include <string>

namespace sdf {

class Deformer {
 public:
  virtual ~Deformer() = default;

  virtual const Matrix& canonical() const = 0;
  std::size_t n_points() const { return static_cast<std::size_t>(canonical().rows()); }

  /// Positions of the canonical points at t in [0, 1].
  virtual Matrix deform(double t) = 0;
  /// d/dt in sequence-time units at t in [0, 1].
  virtual Matrix velocity(double t) = 0;

  /// Constant-velocity extrapolation: deform(from) + dt * velocity(from).
  Matrix advect(double from_t, double dt) {
    if (!(dt >= 0.0) || !std::isfinite(dt)) throw InvalidArgument("advect: dt must be finite and >= 0");
    Matrix x = deform(from_t);
    if (dt > 0.0) x += dt * velocity(from_t);
    return x;
  }

  virtual ckpt::Checkpoint to_checkpoint() const = 0;
};

inline void append_matrix(ckpt::Checkpoint& c, const std::string& name, const Matrix& m) {
  ckpt::Section s;
  s.name = name;
  s.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  s.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) s.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  c.sections.push_back(std::move(s));
}

inline Matrix section_matrix(const ckpt::Checkpoint& c, const std::string& name) {
  const ckpt::Section* s = c.find(name);
  if (!s || s->dims.size() != 2) throw InvalidArgument("checkpoint lacks matrix section " + name);
  Matrix m(s->dims[0], s->dims[1]);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s->data[static_cast<std::size_t>(i)];
  return m;
}

class FieldDeformer final : public Deformer {
 public:
  static constexpr Eigen::Index kChunk = 1024;

  FieldDeformer(std::unique_ptr<SplineField> field, Matrix canonical)
      : field_(std::move(field)), canonical_(std::move(canonical)) {
    if (canonical_.cols() != 3 || canonical_.rows() < 1) throw InvalidArgument("FieldDeformer: need N x 3 points");
  }

  SplineField& field() noexcept { return *field_; }
  const Matrix& canonical() const override { return canonical_; }

  Matrix deform(double t) override {
    return chunked([&](const Matrix& x) { return field_->deform(x, t); });
  }
  Matrix velocity(double t) override {
    return chunked([&](const Matrix& x) { return field_->velocity(x, t, TimeUnits::sequence); });
  }
  Matrix acceleration(double t) {
    return chunked([&](const Matrix& x) { return field_->acceleration(x, t, TimeUnits::sequence); });
  }

  ckpt::Checkpoint to_checkpoint() const override {
    ckpt::Checkpoint c = field_->to_checkpoint();
    append_matrix(c, "canonical", canonical_);
    return c;
  }

 private:
  template <class Fn>
  Matrix chunked(Fn&& fn) const {
    Matrix out(canonical_.rows(), 3);
    for (Eigen::Index b = 0; b < canonical_.rows(); b += kChunk) {
      const Eigen::Index n = std::min(kChunk, canonical_.rows() - b);
      out.middleRows(b, n) = fn(Matrix(canonical_.middleRows(b, n)));
    }
    return out;
  }

  std::unique_ptr<SplineField> field_;
  Matrix canonical_;
};

/// Plays back a stored trajectory: exact at frame times, piecewise linear in
/// between.
class ReplayDeformer final : public Deformer {
 public:
  explicit ReplayDeformer(TrajectorySet traj) : traj_(std::move(traj)) { traj_.validate(); }

  const Matrix& canonical() const override { return traj_.frames[0]; }
  const TrajectorySet& trajectory() const noexcept { return traj_; }

  Matrix deform(double t) override {
    const auto [f, w] = locate(t);
    if (w == 0.0) return traj_.frames[f];
    return (1.0 - w) * traj_.frames[f] + w * traj_.frames[f + 1];
  }

  Matrix velocity(double t) override {
    const auto [f, w] = locate(t);
    const std::size_t lo = std::min(f, traj_.n_frames() - 2);
    return (traj_.frames[lo + 1] - traj_.frames[lo]) * static_cast<double>(traj_.n_frames() - 1);
  }

  ckpt::Checkpoint to_checkpoint() const override {
    ckpt::Checkpoint c;
    c.header = ckpt::format_key_values({{"kind", "replay"}});
    ckpt::Section s;
    s.name = "frames";
    s.dims = {static_cast<std::uint32_t>(traj_.n_frames()), static_cast<std::uint32_t>(traj_.n_points()), 3};
    for (const auto& f : traj_.frames)
      for (Eigen::Index i = 0; i < f.size(); ++i) s.data.push_back(static_cast<float>(f.data()[i]));
    c.sections.push_back(std::move(s));
    return c;
  }

  static std::unique_ptr<ReplayDeformer> from_checkpoint(const ckpt::Checkpoint& c) {
    const ckpt::Section* s = c.find("frames");
    if (!s || s->dims.size() != 3 || s->dims[2] != 3) throw InvalidArgument("replay checkpoint lacks frames");
    TrajectorySet t;
    std::size_t k = 0;
    for (std::uint32_t f = 0; f < s->dims[0]; ++f) {
      Matrix m(s->dims[1], 3);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s->data[k++];
      t.frames.push_back(std::move(m));
    }
    return std::make_unique<ReplayDeformer>(std::move(t));
  }

 private:
  std::pair<std::size_t, double> locate(double t) const {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("replay: t outside [0, 1]");
    const double x = t * static_cast<double>(traj_.n_frames() - 1);
    const auto f = std::min(static_cast<std::size_t>(std::floor(x)), traj_.n_frames() - 1);
    return {f, f + 1 < traj_.n_frames() ? x - static_cast<double>(f) : 0.0};
  }

  TrajectorySet traj_;
};

/// Rebuilds whichever deformer a checkpoint describes.
inline std::unique_ptr<Deformer> load_deformer(const ckpt::Checkpoint& c) {
  const auto kv = ckpt::parse_key_values(c.header);
  const auto it = kv.find("kind");
  if (it == kv.end()) throw InvalidArgument("checkpoint header has no kind");
  if (it->second == "replay") return ReplayDeformer::from_checkpoint(c);
  if (it->second == "spline-field")
    return std::make_unique<FieldDeformer>(SplineField::from_checkpoint(c), section_matrix(c, "canonical"));
  throw InvalidArgument("unknown checkpoint kind: " + it->second);
}

}  // namespace sdf
