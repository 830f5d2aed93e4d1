#pragma once

// Relative-pose-aware feature hierarchy: the relation encoder, intra-scale
// edge convolution over neighboring local patches, inter-scale fusion of
// local and global branches, and the classification head.

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "parot/disentangle.hpp"
#include "parot/geom.hpp"
#include "parot/nn.hpp"
#include "parot/tensor.hpp"

namespace parot::net {

/// Which slice of the 16-scalar patch-patch relation feeds the relation
/// encoder: all of it, only the 9 frame-frame cosines, only distance plus the
/// 6 offset cosines, or nothing at all (relation encoder skipped entirely).
enum class RelationMode { kFull, kOrientation, kPosition, kNone };

inline std::size_t relation_width(RelationMode m) {
  switch (m) {
    case RelationMode::kFull:
      return 16;
    case RelationMode::kOrientation:
      return 9;
    case RelationMode::kPosition:
      return 7;
    case RelationMode::kNone:
      return 0;
  }
  return 0;
}

inline RelationMode relation_mode_from_string(const std::string& s) {
  if (s == "full") return RelationMode::kFull;
  if (s == "orientation") return RelationMode::kOrientation;
  if (s == "position") return RelationMode::kPosition;
  if (s == "none") return RelationMode::kNone;
  throw std::invalid_argument("unknown relation mode '" + s + "'");
}

namespace detail {

template <typename Real>
num::Tensor<Real> constant_column(const std::vector<Real>& v) {
  return num::Tensor<Real>::from({v.size(), 1}, v);
}

/// Unit offset directions as a constant tensor; offsets below 1e-8 become the
/// zero vector so all cosines against them are 0.
template <typename Real>
num::Tensor<Real> unit_offsets(const std::vector<geom::Vec3>& u) {
  std::vector<Real> data(u.size() * 3, Real(0));
  for (std::size_t i = 0; i < u.size(); ++i) {
    double n = geom::norm(u[i]);
    if (n >= 1e-8)
      for (int j = 0; j < 3; ++j) data[i * 3 + j] = Real(u[i][j] / n);
  }
  return num::Tensor<Real>::from({u.size(), 3}, std::move(data));
}

}  // namespace detail

/// Differentiable patch-patch relation rows for a list of (m, n) patch pairs.
/// u[p] is the world offset from pair p's m-reference to its n-reference.
/// Full layout: [dist; cos(d_i^m, d_j^n) row-major over i, j; cos(d_i^m, u);
/// cos(d_i^n, u)]; other modes keep the corresponding slice.
template <typename Real>
num::Tensor<Real> patch_relation_tensor(const FrameTensors<Real>& fm,
                                        const std::vector<std::size_t>& idx_m,
                                        const FrameTensors<Real>& fn,
                                        const std::vector<std::size_t>& idx_n,
                                        const std::vector<geom::Vec3>& u,
                                        RelationMode mode) {
  if (idx_m.size() != idx_n.size() || idx_m.size() != u.size())
    throw std::invalid_argument("patch_relation_tensor: pair list size mismatch");
  if (mode == RelationMode::kNone)
    throw std::invalid_argument("patch_relation_tensor: no relation slice requested");
  const std::array<const num::Tensor<Real>*, 3> axes_m{&fm.d1, &fm.d2, &fm.d3};
  const std::array<const num::Tensor<Real>*, 3> axes_n{&fn.d1, &fn.d2, &fn.d3};

  std::vector<num::Tensor<Real>> cols;
  if (mode != RelationMode::kOrientation) {
    std::vector<Real> dist(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) dist[i] = Real(geom::norm(u[i]));
    cols.push_back(detail::constant_column(dist));
  }
  std::array<num::Tensor<Real>, 3> gm, gn;
  for (int i = 0; i < 3; ++i) {
    gm[i] = num::gather_rows(*axes_m[i], idx_m);
    gn[i] = num::gather_rows(*axes_n[i], idx_n);
  }
  if (mode != RelationMode::kPosition)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) cols.push_back(num::rowdot(gm[i], gn[j]));
  if (mode != RelationMode::kOrientation) {
    auto un = detail::unit_offsets<Real>(u);
    for (int i = 0; i < 3; ++i) cols.push_back(num::rowdot(gm[i], un));
    for (int i = 0; i < 3; ++i) cols.push_back(num::rowdot(gn[i], un));
  }
  return num::concat_cols(cols);
}

/// Differentiable point-patch relation rows: [dist; cos(d_i^q, u)] with
/// u[p] the offset from the dense point to the patch reference.
template <typename Real>
num::Tensor<Real> point_relation_tensor(const FrameTensors<Real>& fq,
                                        const std::vector<std::size_t>& idx_q,
                                        const std::vector<geom::Vec3>& u) {
  if (idx_q.size() != u.size())
    throw std::invalid_argument("point_relation_tensor: pair list size mismatch");
  std::vector<Real> dist(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) dist[i] = Real(geom::norm(u[i]));
  auto un = detail::unit_offsets<Real>(u);
  std::vector<num::Tensor<Real>> cols{detail::constant_column(dist)};
  const std::array<const num::Tensor<Real>*, 3> axes{&fq.d1, &fq.d2, &fq.d3};
  for (int i = 0; i < 3; ++i) cols.push_back(num::rowdot(num::gather_rows(*axes[i], idx_q), un));
  return num::concat_cols(cols);
}

/// The relation encoder: one FC to width 32 with batch-norm and ReLU.
template <typename Real>
struct RelationEncoder {
  nn::Linear<Real> fc;
  nn::BatchNorm<Real> bn;

  RelationEncoder(std::size_t in_width, std::mt19937_64& rng)
      : fc(in_width, 32, rng), bn(32) {}

  num::Tensor<Real> forward(const num::Tensor<Real>& rel, bool training) {
    if (rel.cols() != fc.weight.rows())
      throw std::invalid_argument("relation_encode: width " + std::to_string(rel.cols()) +
                                  " does not match encoder input " +
                                  std::to_string(fc.weight.rows()));
    return num::relu(bn.forward(fc.forward(rel), training));
  }

  void collect(nn::ParamMap<Real>& pm, const std::string& prefix) {
    fc.collect(pm, prefix + ".fc");
    bn.collect(pm, prefix + ".bn");
  }
};

/// Edge convolution over each local patch's k nearest reference neighbors:
/// per edge MLP([f_j, f_j - f_i, rel(i, j)]), max-pooled per reference.
template <typename Real>
struct IntraScaleConv {
  RelationMode mode;
  std::optional<RelationEncoder<Real>> rel_enc;
  nn::Mlp<Real> mlp;

  IntraScaleConv(RelationMode m, std::mt19937_64& rng)
      : mode(m),
        mlp({m == RelationMode::kNone ? std::size_t(256) : std::size_t(288), 128, 128, 128},
            nn::Activation::kRelu, rng) {
    if (mode != RelationMode::kNone) rel_enc.emplace(relation_width(mode), rng);
  }

  /// neighbors[i] lists k_intra reference indices (self included).
  num::Tensor<Real> forward(const num::Tensor<Real>& features,
                            const FrameTensors<Real>& frames,
                            const std::vector<geom::Vec3>& refs,
                            const std::vector<std::vector<std::size_t>>& neighbors,
                            bool training) {
    const std::size_t n = features.rows();
    if (neighbors.size() != n)
      throw std::invalid_argument("intra_scale_conv: neighbor list size mismatch");
    const std::size_t k = neighbors[0].size();
    std::vector<std::size_t> idx_i, idx_j;
    std::vector<geom::Vec3> u;
    idx_i.reserve(n * k);
    idx_j.reserve(n * k);
    u.reserve(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      if (neighbors[i].size() != k)
        throw std::invalid_argument("intra_scale_conv: ragged neighbor lists");
      for (auto j : neighbors[i]) {
        idx_i.push_back(i);
        idx_j.push_back(j);
        u.push_back(refs[j] - refs[i]);
      }
    }
    auto fi = num::gather_rows(features, idx_i);
    auto fj = num::gather_rows(features, idx_j);
    std::vector<num::Tensor<Real>> cols{fj, num::sub(fj, fi)};
    if (mode != RelationMode::kNone) {
      auto rel = patch_relation_tensor(frames, idx_i, frames, idx_j, u, mode);
      cols.push_back(rel_enc->forward(rel, training));
    }
    auto edges = mlp.forward(num::concat_cols(cols), training);
    return num::max_rows_grouped(edges, k);
  }

  void collect(nn::ParamMap<Real>& pm, const std::string& prefix) {
    if (rel_enc) rel_enc->collect(pm, prefix + ".rel");
    mlp.collect(pm, prefix + ".mlp");
  }
};

/// Fuses each local patch with its matching global patch and max-pools over
/// references into one shape descriptor of width 1024.
template <typename Real>
struct InterScaleFuse {
  RelationMode mode;
  std::optional<RelationEncoder<Real>> rel_enc;
  nn::Mlp<Real> mlp;

  InterScaleFuse(RelationMode m, std::mt19937_64& rng)
      : mode(m),
        mlp({m == RelationMode::kNone ? std::size_t(256) : std::size_t(288), 256, 512, 1024},
            nn::Activation::kLeakyRelu02, rng) {
    if (mode != RelationMode::kNone) rel_enc.emplace(relation_width(mode), rng);
  }

  /// `pool_group` rows are pooled into one output row (0 = pool everything);
  /// training batches several samples' references in one call and pools per
  /// sample, so the MLP's batch normalization sees cross-sample statistics.
  num::Tensor<Real> forward(const num::Tensor<Real>& local_features,
                            const num::Tensor<Real>& global_features,
                            const FrameTensors<Real>& local_frames,
                            const FrameTensors<Real>& global_frames,
                            const std::vector<geom::Vec3>& local_refs, bool training,
                            std::size_t pool_group = 0) {
    const std::size_t n = local_features.rows();
    if (global_features.rows() != n)
      throw std::invalid_argument("inter_scale_fuse: local/global sequence length mismatch");
    std::vector<num::Tensor<Real>> cols{local_features, global_features};
    if (mode != RelationMode::kNone) {
      std::vector<std::size_t> idx(n);
      std::vector<geom::Vec3> u(n);
      for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
        // global patch reference is the world origin of the centered cloud
        u[i] = geom::Vec3{0, 0, 0} - local_refs[i];
      }
      auto rel = patch_relation_tensor(local_frames, idx, global_frames, idx, u, mode);
      cols.push_back(rel_enc->forward(rel, training));
    }
    auto fused = mlp.forward(num::concat_cols(cols), training);
    return num::max_rows_grouped(fused, pool_group == 0 ? n : pool_group);
  }

  void collect(nn::ParamMap<Real>& pm, const std::string& prefix) {
    if (rel_enc) rel_enc->collect(pm, prefix + ".rel");
    mlp.collect(pm, prefix + ".mlp");
  }
};

/// Classification head 1024 -> 512 -> 256 -> classes with dropout 0.5.
template <typename Real>
struct Classifier {
  nn::Linear<Real> fc1, fc2, fc3;
  nn::BatchNorm<Real> bn1, bn2;
  Real dropout_p = Real(0.5);

  Classifier(std::size_t classes, std::mt19937_64& rng)
      : fc1(1024, 512, rng), fc2(512, 256, rng), fc3(256, classes, rng), bn1(512), bn2(256) {}

  num::Tensor<Real> forward(const num::Tensor<Real>& fused, std::mt19937_64& rng,
                            bool training) {
    auto h = num::relu(bn1.forward(fc1.forward(fused), training));
    h = num::dropout(h, dropout_p, rng, training);
    h = num::relu(bn2.forward(fc2.forward(h), training));
    h = num::dropout(h, dropout_p, rng, training);
    return fc3.forward(h);
  }

  void collect(nn::ParamMap<Real>& pm, const std::string& prefix) {
    fc1.collect(pm, prefix + ".fc1");
    bn1.collect(pm, prefix + ".bn1");
    fc2.collect(pm, prefix + ".fc2");
    bn2.collect(pm, prefix + ".bn2");
    fc3.collect(pm, prefix + ".fc3");
  }
};

}  // namespace parot::net
