#pragma once

// Training loops, the combined loss, the cosine learning-rate schedule,
// evaluation metrics (accuracy, instance/class mIoU, invariance gap), and the
// CSV metric log.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "parot/data.hpp"
#include "parot/model.hpp"

namespace parot::train {

struct TrainConfig {
  std::size_t epochs = 250;
  std::size_t batch_size = 32;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  double weight_decay = 1e-6;
  double alpha_local = 0.2;   // local equivariance weight
  double alpha_global = 0.1;  // global equivariance weight
  double beta_local = 0.0;    // local invariance weight
  double beta_global = 0.0;   // global invariance weight
  bool augment_scale = true;
  data::Protocol protocol = data::Protocol::kZSO3;
  std::uint64_t seed = 0;
};

inline double cosine_lr(std::size_t step, std::size_t total, double start, double end) {
  if (total == 0) return end;
  double s = std::min(double(step) / double(total), 1.0);
  return end + 0.5 * (start - end) * (1.0 + std::cos(M_PI * s));
}

/// Deterministic per-(run, epoch, sample) seed stream (splitmix64 over a mix).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Combined loss: task + alpha_l*equi_l + orth_l + beta_l*inv_l
///                     + alpha_g*equi_g + orth_g + beta_g*inv_g.
/// A weight of exactly 0 removes that term from the graph entirely.
template <typename Real>
num::Tensor<Real> total_loss(const num::Tensor<Real>& task,
                             const net::BranchLosses<Real>& local,
                             const net::BranchLosses<Real>& global, const TrainConfig& tc) {
  auto loss = num::add(task, num::add(local.orth, global.orth));
  if (tc.alpha_local != 0)
    loss = num::add(loss, num::scale(local.equi, Real(tc.alpha_local)));
  if (tc.beta_local != 0) loss = num::add(loss, num::scale(local.inv, Real(tc.beta_local)));
  if (tc.alpha_global != 0)
    loss = num::add(loss, num::scale(global.equi, Real(tc.alpha_global)));
  if (tc.beta_global != 0)
    loss = num::add(loss, num::scale(global.inv, Real(tc.beta_global)));
  return loss;
}

struct Metrics {
  double loss = 0;
  double accuracy = 0;
  double imiou = 0;
  double cmiou = 0;
  double inv_gap = 0;
};

/// Per-shape mIoU with the usual part-segmentation convention: a part absent
/// from both the prediction and the ground truth of a shape counts as IoU 1.
inline double shape_miou(const std::vector<int>& pred, const std::vector<int>& gt,
                         std::size_t num_parts) {
  double sum = 0;
  for (std::size_t part = 0; part < num_parts; ++part) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      bool p = pred[i] == int(part), g = gt[i] == int(part);
      inter += p && g;
      uni += p || g;
    }
    sum += uni == 0 ? 1.0 : double(inter) / double(uni);
  }
  return sum / double(num_parts);
}

inline void append_csv(const std::string& path, std::size_t epoch, const std::string& split,
                       data::Protocol protocol, const Metrics& m) {
  bool fresh = !std::filesystem::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::runtime_error("metric log: cannot open '" + path + "'");
  if (fresh) os << "epoch,split,protocol,loss,accuracy,imiou,cmiou,inv_gap\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%s,%s,%.6f,%.6f,%.6f,%.6f,%.6g\n", epoch,
                split.c_str(), data::to_string(protocol).c_str(), m.loss, m.accuracy,
                m.imiou, m.cmiou, m.inv_gap);
  os << buf;
}

/// Rotation a given (split, sample, epoch) sees under the protocol. Test
/// rotations depend only on (seed, sample) so evaluation is repeatable.
inline geom::PointCloud protocol_view(const geom::PointCloud& cloud, data::Protocol p,
                                      bool train_split, std::uint64_t view_seed) {
  std::mt19937_64 rng(view_seed);
  return geom::apply_rotation(cloud, data::protocol_rotation(p, train_split, rng));
}

template <typename Real>
void check_finite(Real loss, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(double(loss)))
    throw std::runtime_error("training aborted: non-finite loss at epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(step));
}

// ---------------------------------------------------------------------------
// Classification

template <typename Real>
Metrics evaluate_cls(net::ClsModel<Real>& model, const data::Dataset& test,
                     const TrainConfig& tc, std::size_t inv_gap_samples = 20) {
  Metrics m;
  std::size_t correct = 0;
  double loss_sum = 0, gap_sum = 0;
  std::size_t gap_n = 0;
  for (std::size_t i = 0; i < test.samples.size(); ++i) {
    auto view = protocol_view(test.samples[i], tc.protocol, false,
                              mix_seed(tc.seed, 0xEEEE, i));
    auto fwd = model.forward(view, mix_seed(tc.seed, 0xE0A1, i), false);
    const auto& logits = fwd.logits.data();
    std::size_t arg = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[arg]) arg = c;
    correct += int(arg) == test.samples[i].class_id;
    loss_sum += double(
        num::softmax_cross_entropy(fwd.logits, {test.samples[i].class_id}).item());

    if (i < inv_gap_samples) {
      std::mt19937_64 rot_rng(mix_seed(tc.seed, 0x6A9, i));
      auto rotated = geom::apply_rotation(view, geom::random_rotation_so3(rot_rng));
      auto fwd2 = model.forward(rotated, mix_seed(tc.seed, 0xE0A1, i), false);
      double worst = 0;
      for (std::size_t c = 0; c < logits.size(); ++c)
        worst = std::max(worst, std::abs(double(logits[c]) - double(fwd2.logits.data()[c])));
      gap_sum += worst;
      ++gap_n;
    }
  }
  m.accuracy = double(correct) / double(test.samples.size());
  m.loss = loss_sum / double(test.samples.size());
  m.inv_gap = gap_n ? gap_sum / double(gap_n) : 0;
  return m;
}

template <typename Real>
void train_cls(net::ClsModel<Real>& model, const data::Dataset& train_set,
               const data::Dataset& test_set, const TrainConfig& tc,
               const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string log_path = out_dir + "/log.csv";
  nn::ParamMap<Real> pm;
  model.collect(pm);
  nn::Adam<Real> adam;
  adam.weight_decay = Real(tc.weight_decay);

  const std::size_t n = train_set.samples.size();
  const std::size_t batches = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = tc.epochs * batches;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double best_acc = -1;

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::mt19937_64 epoch_rng(mix_seed(tc.seed, 0x3B00, epoch));
    std::shuffle(order.begin(), order.end(), epoch_rng);
    double epoch_loss = 0;
    std::size_t epoch_correct = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<geom::PointCloud> views;
      std::vector<std::uint64_t> seeds;
      std::vector<int> labels;
      const std::size_t lo = b * tc.batch_size, hi = std::min(n, lo + tc.batch_size);
      for (std::size_t s = lo; s < hi; ++s) {
        const std::size_t idx = order[s];
        std::uint64_t view_seed = mix_seed(tc.seed, epoch, idx);
        auto view = protocol_view(train_set.samples[idx], tc.protocol, true, view_seed);
        if (tc.augment_scale) {
          std::mt19937_64 aug_rng(mix_seed(tc.seed, 0xA06, view_seed));
          view = data::augment(view, aug_rng);
        }
        views.push_back(std::move(view));
        seeds.push_back(mix_seed(tc.seed, 0xF0A2 + epoch, idx));
        labels.push_back(train_set.samples[idx].class_id);
      }
      // Whole-batch forward: batch normalization everywhere sees cross-sample
      // statistics, matching what its running statistics provide at eval.
      auto fwd = model.forward_features(views, seeds, true);
      std::mt19937_64 head_rng(mix_seed(tc.seed, 0xD07 + epoch, b));
      auto logits = model.head.forward(fwd.fused, head_rng, true);
      for (std::size_t r = 0; r < labels.size(); ++r) {
        const Real* row = &logits.data()[r * model.cfg.num_classes];
        std::size_t arg = 0;
        for (std::size_t cc = 1; cc < model.cfg.num_classes; ++cc)
          if (row[cc] > row[arg]) arg = cc;
        epoch_correct += int(arg) == labels[r];
      }
      auto ce = num::softmax_cross_entropy(logits, labels);
      auto loss = total_loss(ce, fwd.local_losses, fwd.global_losses, tc);
      check_finite(loss.item(), epoch, b);
      epoch_loss += double(loss.item());
      auto grads = num::backward(loss);
      double lr = cosine_lr(epoch * batches + b, total_steps, tc.lr_start, tc.lr_end);
      adam.step(pm, grads, Real(lr));
    }
    Metrics train_m;
    train_m.loss = epoch_loss / double(batches);
    train_m.accuracy = double(epoch_correct) / double(n);
    append_csv(log_path, epoch, "train", tc.protocol, train_m);

    auto test_m = evaluate_cls(model, test_set, tc);
    append_csv(log_path, epoch, "test", tc.protocol, test_m);
    nn::save_params(out_dir + "/last.ckpt", pm);
    if (test_m.accuracy > best_acc) {
      best_acc = test_m.accuracy;
      nn::save_params(out_dir + "/best.ckpt", pm);
    }
  }
}

// ---------------------------------------------------------------------------
// Segmentation

template <typename Real>
Metrics evaluate_seg(net::SegModel<Real>& model, const data::Dataset& test,
                     const TrainConfig& tc, std::size_t num_categories,
                     std::size_t inv_gap_samples = 10) {
  Metrics m;
  const std::size_t parts = test.num_part_labels;
  double loss_sum = 0, gap_sum = 0;
  std::size_t gap_n = 0, correct = 0, total_pts = 0;
  std::vector<double> cat_sum(num_categories, 0);
  std::vector<std::size_t> cat_n(num_categories, 0);
  double iou_sum = 0;
  for (std::size_t i = 0; i < test.samples.size(); ++i) {
    const auto& sample = test.samples[i];
    auto view = protocol_view(sample, tc.protocol, false, mix_seed(tc.seed, 0xEEEE, i));
    auto fwd = model.forward(view, mix_seed(tc.seed, 0xE0A1, i), false);
    loss_sum += double(num::softmax_cross_entropy(fwd.logits, sample.labels).item());
    std::vector<int> pred(sample.labels.size());
    for (std::size_t p = 0; p < pred.size(); ++p) {
      const Real* row = &fwd.logits.data()[p * parts];
      std::size_t arg = 0;
      for (std::size_t c = 1; c < parts; ++c)
        if (row[c] > row[arg]) arg = c;
      pred[p] = int(arg);
      correct += pred[p] == sample.labels[p];
    }
    total_pts += pred.size();
    double iou = shape_miou(pred, sample.labels, parts);
    iou_sum += iou;
    if (sample.class_id >= 0 && std::size_t(sample.class_id) < num_categories) {
      cat_sum[std::size_t(sample.class_id)] += iou;
      cat_n[std::size_t(sample.class_id)]++;
    }
    if (i < inv_gap_samples) {
      std::mt19937_64 rot_rng(mix_seed(tc.seed, 0x6A9, i));
      auto rotated = geom::apply_rotation(view, geom::random_rotation_so3(rot_rng));
      auto fwd2 = model.forward(rotated, mix_seed(tc.seed, 0xE0A1, i), false);
      double worst = 0;
      for (std::size_t j = 0; j < fwd.logits.data().size(); ++j)
        worst = std::max(worst,
                         std::abs(double(fwd.logits.data()[j]) - double(fwd2.logits.data()[j])));
      gap_sum += worst;
      ++gap_n;
    }
  }
  m.loss = loss_sum / double(test.samples.size());
  m.accuracy = double(correct) / double(total_pts);
  m.imiou = iou_sum / double(test.samples.size());
  double csum = 0;
  std::size_t cn = 0;
  for (std::size_t c = 0; c < num_categories; ++c)
    if (cat_n[c]) {
      csum += cat_sum[c] / double(cat_n[c]);
      ++cn;
    }
  m.cmiou = cn ? csum / double(cn) : 0;
  m.inv_gap = gap_n ? gap_sum / double(gap_n) : 0;
  return m;
}

template <typename Real>
void train_seg(net::SegModel<Real>& model, const data::Dataset& train_set,
               const data::Dataset& test_set, const TrainConfig& tc,
               const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string log_path = out_dir + "/log.csv";
  nn::ParamMap<Real> pm;
  model.collect(pm);
  nn::Adam<Real> adam;
  adam.weight_decay = Real(tc.weight_decay);

  const std::size_t n = train_set.samples.size();
  const std::size_t batches = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = tc.epochs * batches;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double best_iou = -1;
  const std::size_t num_categories = std::max<std::size_t>(train_set.num_classes, 1);

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::mt19937_64 epoch_rng(mix_seed(tc.seed, 0x3B00, epoch));
    std::shuffle(order.begin(), order.end(), epoch_rng);
    double epoch_loss = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * tc.batch_size, hi = std::min(n, lo + tc.batch_size);
      const Real inv_b = Real(1) / Real(hi - lo);
      // Per-sample backward with gradient accumulation: only one sample's
      // graph is alive at a time, so peak memory is independent of the batch
      // size. The summed gradient equals the one-big-graph batch gradient
      // because every sample contributes the same number of points.
      num::GradientMap<Real> batch_grads;
      double batch_loss = 0;
      for (std::size_t s = lo; s < hi; ++s) {
        const std::size_t idx = order[s];
        std::uint64_t view_seed = mix_seed(tc.seed, epoch, idx);
        auto view = protocol_view(train_set.samples[idx], tc.protocol, true, view_seed);
        if (tc.augment_scale) {
          std::mt19937_64 aug_rng(mix_seed(tc.seed, 0xA06, view_seed));
          view = data::augment(view, aug_rng);
        }
        auto fwd = model.forward(view, mix_seed(tc.seed, 0xF0A2 + epoch, idx), true);
        auto ce = num::softmax_cross_entropy(fwd.logits, train_set.samples[idx].labels);
        net::BranchLosses<Real> none{num::Tensor<Real>::scalar(0),
                                     num::Tensor<Real>::scalar(0),
                                     num::Tensor<Real>::scalar(0)};
        auto loss = num::scale(total_loss(ce, fwd.local_losses, none, tc), inv_b);
        check_finite(loss.item(), epoch, b);
        batch_loss += double(loss.item());
        auto grads = num::backward(loss);
        for (auto& e : pm.entries) {
          if (!e.trainable) continue;
          const auto* g = grads.find(e.tensor.node());
          if (!g) continue;
          auto& acc = batch_grads.accumulate(e.tensor.node());
          for (std::size_t i = 0; i < g->size(); ++i) acc[i] += (*g)[i];
        }
      }
      epoch_loss += batch_loss;
      double lr = cosine_lr(epoch * batches + b, total_steps, tc.lr_start, tc.lr_end);
      adam.step(pm, batch_grads, Real(lr));
    }
    Metrics train_m;
    train_m.loss = epoch_loss / double(batches);
    append_csv(log_path, epoch, "train", tc.protocol, train_m);

    auto test_m = evaluate_seg(model, test_set, tc, num_categories);
    append_csv(log_path, epoch, "test", tc.protocol, test_m);
    nn::save_params(out_dir + "/last.ckpt", pm);
    if (test_m.imiou > best_iou) {
      best_iou = test_m.imiou;
      nn::save_params(out_dir + "/best.ckpt", pm);
    }
  }
}

}  // namespace parot::train
