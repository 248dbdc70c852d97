// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for gradient checks.
#pragma once

#include "sdf/field.hpp"

#include <cmath>
#include <random>

namespace support {

/// Moves a zero-head field to a generic point: codes ~ U(-0.5, 0.5) and the
/// output layer at a fan-in uniform law, everything else at initialization.
inline void make_generic(sdf::SplineField& f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto& st = f.params();
  for (std::size_t i = 0; i < st.size(); ++i) {
    const sdf::ad::ParamId id{i};
    const auto& e = st.entry(id);
    double bound = 0.0;
    if (e.name == "codes") {
      bound = 0.5;
    } else if (e.name == "decoder.out.bias") {
      bound = 0.1;
    } else if (e.name.rfind("decoder.out.", 0) == 0 && !e.shape.empty()) {
      bound = 1.0 / std::sqrt(static_cast<double>(e.shape[0]));
    } else {
      continue;
    }
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : st.values(id)) v = u(rng);
  }
  st.bump_version();
}

/// Central-difference step per function class. Sine and ReLU networks are
/// probed with a small step; grid encoders are multilinear in each
/// parameter between kinks, so a larger step keeps roundoff low.
inline double fd_step(sdf::EncoderKind k) {
  return k == sdf::EncoderKind::triplanes || k == sdf::EncoderKind::triaxes ? 1e-4 : 1e-6;
}

}  // namespace support
