// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sdf/core.hpp"

#include <vector>

namespace sdf {

/// Positions of N_p points at T timestamps spaced uniformly on [0, 1].
struct TrajectorySet {
  std::vector<Matrix> frames;  // T entries of N_p x 3

  std::size_t n_frames() const noexcept { return frames.size(); }
  std::size_t n_points() const noexcept { return frames.empty() ? 0 : static_cast<std::size_t>(frames[0].rows()); }

  double time(std::size_t f) const { return static_cast<double>(f) / static_cast<double>(n_frames() - 1); }

  void validate() const {
    if (frames.size() < 2) throw InvalidArgument("TrajectorySet: need at least 2 frames");
    for (const auto& f : frames) {
      if (f.cols() != 3 || static_cast<std::size_t>(f.rows()) != n_points())
        throw InvalidArgument("TrajectorySet: inconsistent frame shape");
      if (!f.allFinite()) throw InvalidArgument("TrajectorySet: non-finite position");
    }
  }

  /// Frames at the given indices, in order.
  TrajectorySet select(const std::vector<std::size_t>& idx) const {
    TrajectorySet out;
    for (auto i : idx) out.frames.push_back(frames.at(i));
    return out;
  }
};

}  // namespace sdf
