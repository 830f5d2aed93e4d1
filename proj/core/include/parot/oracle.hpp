#pragma once

// Handcrafted stand-ins for the learned disentangler, used to check the
// architecture's invariance independent of training: content features from a
// sorted pairwise-distance profile (exactly rotation invariant) and frames
// from the deterministic equivariant construction in geom. Conditioned on
// these, every later stage of the pipeline must be rotation invariant to
// numerical precision.

#include <algorithm>
#include <utility>
#include <vector>

#include "parot/model.hpp"

namespace parot::oracle {

/// Sorted pairwise-distance profile of a patch, truncated/zero-padded to
/// width 128. Depends only on the point multiset's shape, never on pose.
template <typename Real>
std::vector<Real> distance_profile(const geom::Patch& patch) {
  std::vector<double> d;
  const auto& pts = patch.local_points;
  d.reserve(pts.size() * (pts.size() - 1) / 2);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) d.push_back(geom::norm(pts[j] - pts[i]));
  std::sort(d.begin(), d.end());
  std::vector<Real> out(128, Real(0));
  for (std::size_t i = 0; i < std::min<std::size_t>(128, d.size()); ++i) out[i] = Real(d[i]);
  return out;
}

template <typename Real>
net::FrameTensors<Real> frames_to_tensors(const std::vector<geom::OrientationFrame>& frames) {
  const std::size_t m = frames.size();
  std::vector<Real> d1(m * 3), d2(m * 3), d3(m * 3);
  for (std::size_t i = 0; i < m; ++i)
    for (int j = 0; j < 3; ++j) {
      d1[i * 3 + j] = Real(frames[i].d1[j]);
      d2[i * 3 + j] = Real(frames[i].d2[j]);
      d3[i * 3 + j] = Real(frames[i].d3[j]);
    }
  net::FrameTensors<Real> out;
  out.d1 = num::Tensor<Real>::from({m, 3}, std::move(d1));
  out.d2 = num::Tensor<Real>::from({m, 3}, std::move(d2));
  out.d3 = num::Tensor<Real>::from({m, 3}, std::move(d3));
  return out;
}

/// Oracle for a whole scale: invariant content + equivariant frames.
template <typename Real>
net::ScaleOracle<Real> make_scale_oracle() {
  return [](const std::vector<geom::Patch>& patches) {
    std::vector<Real> content;
    content.reserve(patches.size() * 128);
    std::vector<geom::OrientationFrame> frames;
    frames.reserve(patches.size());
    for (const auto& p : patches) {
      auto prof = distance_profile<Real>(p);
      content.insert(content.end(), prof.begin(), prof.end());
      frames.push_back(geom::oracle_equivariant_frame(p));
    }
    return std::make_pair(
        num::Tensor<Real>::from({patches.size(), 128}, std::move(content)),
        frames_to_tensors<Real>(frames));
  };
}

}  // namespace parot::oracle
