#pragma once

// Siamese content/orientation disentanglement: a shared lightweight per-point
// encoder pooled over each patch, a content head producing rotation-invariant
// features, two direction heads producing an orientation frame, and the three
// training losses (invariance, equivariance, orthogonality).

#include <array>
#include <random>
#include <vector>

#include "parot/geom.hpp"
#include "parot/nn.hpp"
#include "parot/tensor.hpp"

namespace parot::net {

template <typename Real>
using RotArray = std::array<Real, 9>;  // row-major, acts on row vectors as p * R

template <typename Real>
RotArray<Real> to_array(const geom::Mat3& m) {
  RotArray<Real> r;
  for (int i = 0; i < 9; ++i) r[i] = Real(m.m[i]);
  return r;
}

/// Differentiable orientation frame: unit d1, unit d2, d3 = normalize(d1 x d2).
template <typename Real>
struct FrameTensors {
  num::Tensor<Real> d1, d2, d3;  // each (M, 3)
  std::size_t degenerate_count = 0;
};

template <typename Real>
FrameTensors<Real> complete_frames(const num::Tensor<Real>& d1_raw,
                                   const num::Tensor<Real>& d2_raw) {
  const std::size_t m = d1_raw.rows();
  std::vector<std::array<Real, 3>> ex(m, {Real(1), 0, 0});
  std::vector<std::array<Real, 3>> ey(m, {0, Real(1), 0});
  std::vector<std::array<Real, 3>> ez(m, {0, 0, Real(1)});
  FrameTensors<Real> out;
  std::vector<std::uint8_t> deg1, deg2, deg3;
  out.d1 = num::rownormalize(d1_raw, ex, &deg1);
  out.d2 = num::rownormalize(d2_raw, ey, &deg2);
  out.d3 = num::rownormalize(num::cross3(out.d1, out.d2), ez, &deg3, Real(1e-6));
  for (std::size_t i = 0; i < m; ++i)
    out.degenerate_count += deg1[i] || deg2[i] || deg3[i];
  return out;
}

/// Rotates every frame axis by the per-patch inverse rotation (d * R^T),
/// undoing the training-time patch rotation so downstream consumers see
/// pose in the patch's own coordinates.
template <typename Real>
FrameTensors<Real> derotate_frames(const FrameTensors<Real>& f,
                                   const std::vector<RotArray<Real>>& rot_transposed) {
  FrameTensors<Real> out;
  out.d1 = num::row_rotate(f.d1, rot_transposed);
  out.d2 = num::row_rotate(f.d2, rot_transposed);
  out.d3 = num::row_rotate(f.d3, rot_transposed);
  out.degenerate_count = f.degenerate_count;
  return out;
}

template <typename Real>
struct DisentangleOutput {
  num::Tensor<Real> content;           // (M, 128) rotation-invariant features
  num::Tensor<Real> d1_raw, d2_raw;    // (M, 3) direction head outputs
};

/// Shared-weight encoder serving both siamese branches. Patches are flattened
/// into one (M*K, 3) tensor; the pooled descriptor is per patch.
template <typename Real>
struct Disentangler {
  nn::Mlp<Real> point_mlp;   // per point 3 -> 64 -> 128
  nn::Mlp<Real> trunk;       // pooled 128 -> 128
  nn::Mlp<Real> content;     // 128 -> 128
  nn::Mlp<Real> dir_trunk;   // 128 -> 64
  nn::Linear<Real> head_d1, head_d2;  // 64 -> 3, raw outputs

  Disentangler(std::mt19937_64& rng)
      : point_mlp({3, 64, 128}, nn::Activation::kRelu, rng),
        trunk({128, 128}, nn::Activation::kRelu, rng),
        content({128, 128}, nn::Activation::kRelu, rng),
        dir_trunk({128, 64}, nn::Activation::kRelu, rng),
        head_d1(64, 3, rng),
        head_d2(64, 3, rng) {}

  DisentangleOutput<Real> forward(const num::Tensor<Real>& points, std::size_t patch_size,
                                  bool training) {
    auto per_point = point_mlp.forward(points, training);
    auto pooled = num::max_rows_grouped(per_point, patch_size);
    auto inter = trunk.forward(pooled, training);
    DisentangleOutput<Real> out;
    out.content = content.forward(inter, training);
    auto dir = dir_trunk.forward(inter, training);
    out.d1_raw = head_d1.forward(dir);
    out.d2_raw = head_d2.forward(dir);
    return out;
  }

  void collect(nn::ParamMap<Real>& pm, const std::string& prefix) {
    point_mlp.collect(pm, prefix + ".point");
    trunk.collect(pm, prefix + ".trunk");
    content.collect(pm, prefix + ".content");
    dir_trunk.collect(pm, prefix + ".dir");
    head_d1.collect(pm, prefix + ".d1");
    head_d2.collect(pm, prefix + ".d2");
  }
};

/// Flattens M equally sized patches into an (M*K, 3) constant tensor, with an
/// optional per-patch rotation applied to the raw coordinates.
template <typename Real>
num::Tensor<Real> flatten_patches(const std::vector<geom::Patch>& patches,
                                  const std::vector<geom::Rotation>* rotations = nullptr) {
  if (patches.empty()) throw std::invalid_argument("flatten_patches: no patches");
  const std::size_t k = patches[0].local_points.size();
  std::vector<Real> data;
  data.reserve(patches.size() * k * 3);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& patch = patches[i];
    if (patch.local_points.size() != k)
      throw std::invalid_argument("flatten_patches: ragged patch sizes");
    for (const auto& p : patch.local_points) {
      geom::Vec3 q = rotations ? p * (*rotations)[i].m : p;
      data.push_back(Real(q[0]));
      data.push_back(Real(q[1]));
      data.push_back(Real(q[2]));
    }
  }
  return num::Tensor<Real>::from({patches.size() * k, 3}, std::move(data));
}

// ---------------------------------------------------------------------------
// Losses. All are means over patches so values are comparable across sizes.

/// Squared L2 distance between the two branches' content features.
template <typename Real>
num::Tensor<Real> loss_inv(const num::Tensor<Real>& f_a, const num::Tensor<Real>& f_b) {
  return num::scale(num::sumsq(num::sub(f_a, f_b)), Real(1) / Real(f_a.rows()));
}

/// Equivariance loss for one direction head: || d_a - d_b * (R_b^-1 R_a) ||^2.
/// Row convention: an ideally equivariant pair d_x = d * R_x gives exactly 0.
template <typename Real>
num::Tensor<Real> loss_equi(const num::Tensor<Real>& d_a, const num::Tensor<Real>& d_b,
                            const std::vector<geom::Rotation>& r_a,
                            const std::vector<geom::Rotation>& r_b) {
  std::vector<RotArray<Real>> rel(r_a.size());
  for (std::size_t i = 0; i < r_a.size(); ++i)
    rel[i] = to_array<Real>((r_b[i].inverse() * r_a[i]).m);
  auto target = num::row_rotate(d_b, rel);
  return num::scale(num::sumsq(num::sub(d_a, target)), Real(1) / Real(d_a.rows()));
}

/// Orthogonality loss: mean squared dot product of the raw direction heads.
template <typename Real>
num::Tensor<Real> loss_orth(const num::Tensor<Real>& d1_raw, const num::Tensor<Real>& d2_raw) {
  return num::scale(num::sumsq(num::rowdot(d1_raw, d2_raw)), Real(1) / Real(d1_raw.rows()));
}

/// Per-patch random rotations for the two siamese branches.
struct BranchRotations {
  std::vector<geom::Rotation> a, b;
};

inline BranchRotations draw_branch_rotations(std::size_t m, std::mt19937_64& rng,
                                             bool training) {
  BranchRotations r;
  r.a.resize(m, geom::Rotation::identity());
  r.b.resize(m, geom::Rotation::identity());
  if (training)
    for (std::size_t i = 0; i < m; ++i) {
      r.a[i] = geom::random_rotation_so3(rng);
      r.b[i] = geom::random_rotation_so3(rng);
    }
  return r;
}

/// One siamese pass over a set of equally sized patches. Branch b is only
/// evaluated during training; at test time branch a with identity rotations
/// is the whole module.
template <typename Real>
struct SiameseResult {
  DisentangleOutput<Real> a, b;
  FrameTensors<Real> frames_a;  // de-rotated, fed downstream
  num::Tensor<Real> l_inv, l_equi, l_orth;
  BranchRotations rotations;
};

template <typename Real>
SiameseResult<Real> siamese_forward(Disentangler<Real>& model,
                                    const std::vector<geom::Patch>& patches,
                                    std::mt19937_64& rng, bool training) {
  const std::size_t m = patches.size();
  const std::size_t k = patches[0].local_points.size();
  SiameseResult<Real> out;
  out.rotations = draw_branch_rotations(m, rng, training);

  out.a = model.forward(flatten_patches<Real>(patches, &out.rotations.a), k, training);
  std::vector<RotArray<Real>> rot_a_t(m);
  for (std::size_t i = 0; i < m; ++i)
    rot_a_t[i] = to_array<Real>(out.rotations.a[i].m.transposed());
  out.frames_a = derotate_frames(complete_frames(out.a.d1_raw, out.a.d2_raw), rot_a_t);

  if (training) {
    out.b = model.forward(flatten_patches<Real>(patches, &out.rotations.b), k, training);
    out.l_inv = loss_inv(out.a.content, out.b.content);
    out.l_equi = num::add(
        loss_equi(out.a.d1_raw, out.b.d1_raw, out.rotations.a, out.rotations.b),
        loss_equi(out.a.d2_raw, out.b.d2_raw, out.rotations.a, out.rotations.b));
  } else {
    out.l_inv = num::Tensor<Real>::scalar(0);
    out.l_equi = num::Tensor<Real>::scalar(0);
  }
  out.l_orth = loss_orth(out.a.d1_raw, out.a.d2_raw);
  return out;
}

}  // namespace parot::net
