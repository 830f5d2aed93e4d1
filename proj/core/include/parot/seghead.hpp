#pragma once

// Pose-aware feature propagation from sparse references to dense points, and
// the per-point segmentation head with one-hot class conditioning. The
// propagation never reads raw coordinates except through distance/cosine
// relations, so it inherits the relation invariance.

#include <random>
#include <vector>

#include "parot/hierarchy.hpp"

namespace parot::net {

inline constexpr std::size_t kOneHotWidth = 16;

template <typename Real>
struct Propagation {
  RelationEncoder<Real> rel_enc;  // 4-scalar point-patch relations
  nn::Mlp<Real> mlp;              // 288 -> 256 -> 128
  std::size_t k_prop = 11;
  bool interp_baseline = false;  // inverse-distance interpolation instead

  Propagation(std::size_t k, std::mt19937_64& rng)
      : rel_enc(4, rng), mlp({288, 256, 128}, nn::Activation::kRelu, rng), k_prop(k) {}

  /// dense_features: (N, 128) skip features at the dense points;
  /// sparse_features: (N_l, 128) at the reference points with their frames.
  num::Tensor<Real> forward(const std::vector<geom::Vec3>& dense_points,
                            const num::Tensor<Real>& dense_features,
                            const std::vector<geom::Vec3>& sparse_refs,
                            const num::Tensor<Real>& sparse_features,
                            const FrameTensors<Real>& sparse_frames, bool training) {
    const std::size_t n = dense_points.size();
    if (dense_features.rows() != n)
      throw std::invalid_argument("propagate: dense feature count mismatch");
    if (k_prop > sparse_refs.size())
      throw std::invalid_argument("propagate: k_prop " + std::to_string(k_prop) +
                                  " exceeds reference count " +
                                  std::to_string(sparse_refs.size()));
    if (interp_baseline) return forward_interp(dense_points, dense_features, sparse_refs,
                                               sparse_features, training);

    // knn returns ascending (distance, index), fixing the aggregation order.
    auto nbrs = geom::knn(dense_points, sparse_refs, k_prop);
    std::vector<std::size_t> idx_p, idx_q;
    std::vector<geom::Vec3> u;
    idx_p.reserve(n * k_prop);
    idx_q.reserve(n * k_prop);
    u.reserve(n * k_prop);
    for (std::size_t i = 0; i < n; ++i)
      for (auto j : nbrs[i]) {
        idx_p.push_back(i);
        idx_q.push_back(j);
        u.push_back(sparse_refs[j] - dense_points[i]);
      }
    auto fp = num::gather_rows(dense_features, idx_p);
    auto fq = num::gather_rows(sparse_features, idx_q);
    auto rel = point_relation_tensor(sparse_frames, idx_q, u);
    auto enc = rel_enc.forward(rel, training);
    auto terms = mlp.forward(num::concat_cols<Real>({fp, fq, enc}), training);
    return num::sum_rows_grouped(terms, k_prop);
  }

  void collect(nn::ParamMap<Real>& pm, const std::string& prefix) {
    rel_enc.collect(pm, prefix + ".rel");
    mlp.collect(pm, prefix + ".mlp");
  }

 private:
  /// Comparison baseline: classic 3-neighbor inverse-distance interpolation of
  /// the sparse features (no pose information), pushed through the same MLP
  /// with the relation slot zeroed so capacity matches.
  num::Tensor<Real> forward_interp(const std::vector<geom::Vec3>& dense_points,
                                   const num::Tensor<Real>& dense_features,
                                   const std::vector<geom::Vec3>& sparse_refs,
                                   const num::Tensor<Real>& sparse_features,
                                   bool training) {
    const std::size_t n = dense_points.size();
    const std::size_t k = std::min<std::size_t>(3, sparse_refs.size());
    auto nbrs = geom::knn(dense_points, sparse_refs, k);
    std::vector<std::size_t> idx_q;
    std::vector<Real> w;
    idx_q.reserve(n * k);
    w.reserve(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0;
      std::array<double, 3> wi{};
      for (std::size_t r = 0; r < k; ++r) {
        geom::Vec3 d = sparse_refs[nbrs[i][r]] - dense_points[i];
        wi[r] = 1.0 / std::max(geom::dot(d, d), 1e-10);
        total += wi[r];
      }
      for (std::size_t r = 0; r < k; ++r) {
        idx_q.push_back(nbrs[i][r]);
        w.push_back(Real(wi[r] / total));
      }
    }
    auto weighted = num::rowscale(num::gather_rows(sparse_features, idx_q), w);
    auto interp = num::sum_rows_grouped(weighted, k);
    auto zeros = num::Tensor<Real>::zeros({n, 32});
    auto terms =
        mlp.forward(num::concat_cols<Real>({dense_features, interp, zeros}), training);
    return terms;
  }
};

/// Per-point head: (128 + one-hot) -> 128 -> part logits, dropout 0.5.
template <typename Real>
struct SegHead {
  nn::Linear<Real> fc1, fc2;
  nn::BatchNorm<Real> bn1;
  Real dropout_p = Real(0.5);

  SegHead(std::size_t num_parts, std::mt19937_64& rng)
      : fc1(128 + kOneHotWidth, 128, rng), fc2(128, num_parts, rng), bn1(128) {}

  num::Tensor<Real> forward(const num::Tensor<Real>& per_point,
                            const std::vector<Real>& class_onehot, std::mt19937_64& rng,
                            bool training) {
    if (class_onehot.size() != kOneHotWidth)
      throw std::invalid_argument("segment: one-hot width must be " +
                                  std::to_string(kOneHotWidth));
    std::size_t ones = 0;
    for (Real v : class_onehot) {
      if (v != Real(0) && v != Real(1))
        throw std::invalid_argument("segment: one-hot entries must be 0 or 1");
      ones += v == Real(1);
    }
    if (ones != 1) throw std::invalid_argument("segment: one-hot must have exactly one 1");

    const std::size_t n = per_point.rows();
    std::vector<Real> tiled(n * kOneHotWidth);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < kOneHotWidth; ++j)
        tiled[i * kOneHotWidth + j] = class_onehot[j];
    auto onehot = num::Tensor<Real>::from({n, kOneHotWidth}, std::move(tiled));
    auto h = num::relu(bn1.forward(fc1.forward(num::concat_cols<Real>({per_point, onehot})),
                                   training));
    h = num::dropout(h, dropout_p, rng, training);
    return fc2.forward(h);
  }

  void collect(nn::ParamMap<Real>& pm, const std::string& prefix) {
    fc1.collect(pm, prefix + ".fc1");
    bn1.collect(pm, prefix + ".bn1");
    fc2.collect(pm, prefix + ".fc2");
  }
};

}  // namespace parot::net
