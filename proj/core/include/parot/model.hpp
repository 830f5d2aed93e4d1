#pragma once

// Full classification and segmentation models: patch extraction, per-scale
// disentanglement, intra/inter-scale aggregation, and the task heads. Each
// forward pass is a pure function of (parameters, cloud, sample_seed), which
// keeps finite-difference checks and determinism tests honest.

#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "parot/disentangle.hpp"
#include "parot/geom.hpp"
#include "parot/hierarchy.hpp"
#include "parot/seghead.hpp"

namespace parot::net {

struct ModelConfig {
  std::size_t num_classes = 4;
  std::size_t num_parts = 2;
  std::size_t n_local = 64;   // local patch count (FPS references)
  std::size_t k_local = 32;   // points per local patch
  std::size_t k_intra = 16;   // intra-scale edge-conv neighbors
  std::size_t n_global = 16;  // points per global patch
  std::size_t k_prop = 11;    // propagation neighbors (segmentation)
  std::size_t k_point = 16;   // per-point patch size for dense skip features
  RelationMode relation_mode = RelationMode::kFull;
  bool disable_intra = false;
  bool disable_inter = false;
  bool interp_baseline = false;
  geom::NeighborSearch search = geom::NeighborSearch::kKnn;
  double ball_radius = 0.2;
};

/// Optional stand-in for the learned disentangler: given patches, produce
/// content features and frames directly (used by the oracle-conditioned
/// invariance tests, where both are handcrafted rotation-invariant/
/// equivariant quantities).
template <typename Real>
using ScaleOracle = std::function<std::pair<num::Tensor<Real>, FrameTensors<Real>>(
    const std::vector<geom::Patch>&)>;

template <typename Real>
struct BranchLosses {
  num::Tensor<Real> inv, equi, orth;
  std::size_t degenerate_frames = 0;
};

template <typename Real>
struct ScaleFeatures {
  num::Tensor<Real> content;
  FrameTensors<Real> frames;
  BranchLosses<Real> losses;
};

template <typename Real>
ScaleFeatures<Real> run_scale(Disentangler<Real>& model,
                              const std::vector<geom::Patch>& patches,
                              std::mt19937_64& rng, bool training,
                              const ScaleOracle<Real>* oracle) {
  ScaleFeatures<Real> out;
  if (oracle && *oracle) {
    auto [content, frames] = (*oracle)(patches);
    out.content = std::move(content);
    out.frames = std::move(frames);
    out.losses.inv = num::Tensor<Real>::scalar(0);
    out.losses.equi = num::Tensor<Real>::scalar(0);
    out.losses.orth = num::Tensor<Real>::scalar(0);
    return out;
  }
  auto res = siamese_forward(model, patches, rng, training);
  out.content = res.a.content;
  out.frames = res.frames_a;
  out.losses.inv = res.l_inv;
  out.losses.equi = res.l_equi;
  out.losses.orth = res.l_orth;
  out.losses.degenerate_frames = res.frames_a.degenerate_count;
  return out;
}

// ---------------------------------------------------------------------------
// Classification

template <typename Real>
struct ClsForward {
  num::Tensor<Real> logits;  // (B, classes); undefined from forward_features
  num::Tensor<Real> fused;   // (B, 1024) pooled shape descriptors
  BranchLosses<Real> local_losses, global_losses;
  num::Tensor<Real> local_content;  // (B*n_local, 128), kept for feature export
  std::vector<geom::Vec3> local_refs;  // concatenated, sample-major
};

template <typename Real>
struct ClsModel {
  ModelConfig cfg;
  Disentangler<Real> local_disent, global_disent;
  IntraScaleConv<Real> intra;
  InterScaleFuse<Real> inter;
  Classifier<Real> head;

  ClsModel(const ModelConfig& c, std::mt19937_64& rng)
      : cfg(c),
        local_disent(rng),
        global_disent(rng),
        intra(c.relation_mode, rng),
        inter(c.relation_mode, rng),
        head(c.num_classes, rng) {}

  void collect(nn::ParamMap<Real>& pm) {
    local_disent.collect(pm, "local");
    global_disent.collect(pm, "global");
    intra.collect(pm, "intra");
    inter.collect(pm, "inter");
    head.collect(pm, "cls");
  }

  /// Everything up to (and including) the pooled 1024-wide shape descriptors,
  /// over a whole minibatch at once. Batching matters for training: every
  /// batch-normalization layer then sees cross-sample statistics, so its
  /// running statistics describe the same distribution eval mode will see.
  /// The classifier head is applied separately (see `forward`/`train_cls`).
  ClsForward<Real> forward_features(const std::vector<geom::PointCloud>& clouds,
                                    const std::vector<std::uint64_t>& sample_seeds,
                                    bool training,
                                    const ScaleOracle<Real>* local_oracle = nullptr,
                                    const ScaleOracle<Real>* global_oracle = nullptr) {
    if (clouds.empty() || clouds.size() != sample_seeds.size())
      throw std::invalid_argument("cls forward: clouds/seeds size mismatch");
    const std::size_t batch = clouds.size();

    std::vector<geom::Patch> local_all, global_all;
    std::vector<geom::Vec3> refs_all;
    std::vector<std::vector<std::size_t>> neighbors_all;
    local_all.reserve(batch * cfg.n_local);
    global_all.reserve(batch * cfg.n_local);
    refs_all.reserve(batch * cfg.n_local);
    neighbors_all.reserve(batch * cfg.n_local);
    for (std::size_t b = 0; b < batch; ++b) {
      std::mt19937_64 rng(sample_seeds[b]);
      auto local = geom::extract_local_patches(clouds[b], cfg.n_local, cfg.k_local, rng,
                                               cfg.search, cfg.ball_radius);
      std::vector<geom::Vec3> refs;
      refs.reserve(cfg.n_local);
      for (const auto& p : local.patches) refs.push_back(p.reference_point);
      auto global_patches = geom::extract_global_patches(clouds[b], cfg.n_global, refs, rng);
      if (!cfg.disable_intra) {
        auto nbrs = geom::knn(refs, refs, cfg.k_intra);
        for (auto& lst : nbrs) {
          for (auto& j : lst) j += b * cfg.n_local;
          neighbors_all.push_back(std::move(lst));
        }
      }
      local_all.insert(local_all.end(), std::make_move_iterator(local.patches.begin()),
                       std::make_move_iterator(local.patches.end()));
      global_all.insert(global_all.end(),
                        std::make_move_iterator(global_patches.begin()),
                        std::make_move_iterator(global_patches.end()));
      refs_all.insert(refs_all.end(), refs.begin(), refs.end());
    }

    // One rotation stream for the whole batch keeps runs reproducible from
    // (seed stream); per-sample purity at eval holds because eval draws none.
    std::uint64_t rot_seed = sample_seeds[0];
    for (std::size_t b = 1; b < batch; ++b)
      rot_seed = rot_seed * 0x9E3779B97F4A7C15ULL + sample_seeds[b];
    std::mt19937_64 rng(rot_seed);

    ClsForward<Real> out;
    out.local_refs = refs_all;
    auto ls = run_scale(local_disent, local_all, rng, training, local_oracle);
    auto gs = run_scale(global_disent, global_all, rng, training, global_oracle);
    out.local_losses = ls.losses;
    out.global_losses = gs.losses;
    out.local_content = ls.content;

    num::Tensor<Real> features = ls.content;
    if (!cfg.disable_intra)
      features = intra.forward(features, ls.frames, refs_all, neighbors_all, training);
    num::Tensor<Real> fused;
    if (cfg.disable_inter) {
      // Global information removed: same fusion MLP over [f, 0, 0].
      const std::size_t rows = batch * cfg.n_local;
      std::vector<num::Tensor<Real>> cols{features, num::Tensor<Real>::zeros({rows, 128})};
      if (cfg.relation_mode != RelationMode::kNone)
        cols.push_back(num::Tensor<Real>::zeros({rows, 32}));
      fused = num::max_rows_grouped(inter.mlp.forward(num::concat_cols(cols), training),
                                    cfg.n_local);
    } else {
      fused = inter.forward(features, gs.content, ls.frames, gs.frames, refs_all, training,
                            cfg.n_local);
    }
    out.fused = fused;  // (batch, 1024)
    return out;
  }

  ClsForward<Real> forward(const geom::PointCloud& cloud, std::uint64_t sample_seed,
                           bool training, const ScaleOracle<Real>* local_oracle = nullptr,
                           const ScaleOracle<Real>* global_oracle = nullptr) {
    auto out = forward_features({cloud}, {sample_seed}, training, local_oracle, global_oracle);
    std::mt19937_64 head_rng(sample_seed ^ 0x9E3779B97F4A7C15ULL);
    out.logits = head.forward(out.fused, head_rng, training);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Segmentation (local scale only: sparse patch features are propagated back
// to every point and classified per point)

template <typename Real>
struct SegForward {
  num::Tensor<Real> logits;  // (N, parts)
  BranchLosses<Real> local_losses;
};

template <typename Real>
struct SegModel {
  ModelConfig cfg;
  Disentangler<Real> disent;  // shared by sparse patches and per-point patches
  IntraScaleConv<Real> intra;
  Propagation<Real> prop;
  SegHead<Real> head;

  SegModel(const ModelConfig& c, std::mt19937_64& rng)
      : cfg(c), disent(rng), intra(c.relation_mode, rng), prop(c.k_prop, rng),
        head(c.num_parts, rng) {
    prop.interp_baseline = c.interp_baseline;
  }

  void collect(nn::ParamMap<Real>& pm) {
    disent.collect(pm, "local");
    intra.collect(pm, "intra");
    prop.collect(pm, "prop");
    head.collect(pm, "seg");
  }

  SegForward<Real> forward(const geom::PointCloud& cloud, std::uint64_t sample_seed,
                           bool training, const ScaleOracle<Real>* local_oracle = nullptr,
                           const ScaleOracle<Real>* point_oracle = nullptr) {
    std::mt19937_64 rng(sample_seed);
    auto local = geom::extract_local_patches(cloud, cfg.n_local, cfg.k_local, rng,
                                             cfg.search, cfg.ball_radius);
    std::vector<geom::Vec3> refs;
    refs.reserve(cfg.n_local);
    for (const auto& p : local.patches) refs.push_back(p.reference_point);

    SegForward<Real> out;
    auto ls = run_scale(disent, local.patches, rng, training, local_oracle);
    out.local_losses = ls.losses;

    num::Tensor<Real> sparse = ls.content;
    if (!cfg.disable_intra) {
      auto neighbors = geom::knn(refs, refs, cfg.k_intra);
      sparse = intra.forward(sparse, ls.frames, refs, neighbors, training);
    }

    // Dense skip features: content head over a small patch around every point
    // (branch a only, no extra rotations or losses).
    std::vector<geom::Patch> point_patches;
    point_patches.reserve(cloud.points.size());
    auto nbrs = geom::knn(cloud.points, cloud.points, cfg.k_point);
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
      geom::Patch p;
      p.reference_point = cloud.points[i];
      p.local_points.reserve(cfg.k_point);
      for (auto j : nbrs[i]) p.local_points.push_back(cloud.points[j] - cloud.points[i]);
      point_patches.push_back(std::move(p));
    }
    num::Tensor<Real> dense;
    if (point_oracle && *point_oracle) {
      dense = (*point_oracle)(point_patches).first;
    } else {
      dense = disent.forward(flatten_patches<Real>(point_patches), cfg.k_point, training)
                  .content;
    }

    auto propagated =
        prop.forward(cloud.points, dense, refs, sparse, ls.frames, training);
    std::vector<Real> onehot(kOneHotWidth, Real(0));
    if (cloud.class_id < 0 || std::size_t(cloud.class_id) >= kOneHotWidth)
      throw std::invalid_argument("segment: class id out of one-hot range");
    onehot[std::size_t(cloud.class_id)] = Real(1);
    out.logits = head.forward(propagated, onehot, rng, training);
    return out;
  }
};

}  // namespace parot::net
