#pragma once

// Layer primitives on top of the tensor engine: linear, batch norm, dropout,
// MLP stacks, Adam, and the checkpoint container format.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "parot/tensor.hpp"

namespace parot::nn {

using num::GradientMap;
using num::Tensor;

/// Ordered registry of named parameter blocks. Order is the serialization and
/// optimizer-update order, so it must be deterministic.
template <typename Real>
struct ParamMap {
  struct Entry {
    std::string name;
    Tensor<Real> tensor;
    bool trainable = true;
  };
  std::vector<Entry> entries;

  void add(std::string name, Tensor<Real> t, bool trainable = true) {
    entries.push_back({std::move(name), std::move(t), trainable});
  }
  Tensor<Real>* find(const std::string& name) {
    for (auto& e : entries)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }
};

/// Fan-in-scaled uniform init, bound = sqrt(6 / fan_in).
template <typename Real>
Tensor<Real> init_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                          std::mt19937_64& rng) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  const double bound = std::sqrt(6.0 / double(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<Real> data(n);
  for (auto& x : data) x = Real(u(rng));
  return Tensor<Real>::from(std::move(shape), std::move(data), true);
}

template <typename Real>
struct Linear {
  Tensor<Real> weight;  // (in, out)
  Tensor<Real> bias;    // (out)

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
      : weight(init_uniform<Real>({in, out}, in, rng)),
        bias(Tensor<Real>::zeros({out}, true)) {}

  Tensor<Real> forward(const Tensor<Real>& x) const {
    return num::add_bias(num::matmul(x, weight), bias);
  }
  void collect(ParamMap<Real>& pm, const std::string& prefix) {
    pm.add(prefix + ".weight", weight);
    pm.add(prefix + ".bias", bias);
  }
};

/// Batch normalization over rows of an (N, C) tensor. Training mode uses
/// batch statistics (biased variance) and updates running statistics in
/// place; eval mode uses the running statistics and works at batch size 1.
template <typename Real>
struct BatchNorm {
  Tensor<Real> gamma, beta;
  Tensor<Real> run_mean, run_var;  // non-trainable state
  Real eps = Real(1e-5);
  Real momentum = Real(0.9);  // fraction of the old running value kept

  BatchNorm() = default;
  explicit BatchNorm(std::size_t c)
      : gamma(Tensor<Real>::from({c}, std::vector<Real>(c, Real(1)), true)),
        beta(Tensor<Real>::zeros({c}, true)),
        run_mean(Tensor<Real>::zeros({c})),
        run_var(Tensor<Real>::from({c}, std::vector<Real>(c, Real(1)))) {}

  Tensor<Real> forward(const Tensor<Real>& x, bool training) {
    num::detail::require(x.rank() == 2 && x.cols() == gamma.size(), "batchnorm",
                         "expected (N, " + std::to_string(gamma.size()) + ") input, got " +
                             num::detail::shape_str(x.shape()));
    num::detail::require(x.rows() >= 1, "batchnorm", "empty batch");
    const std::size_t n = x.rows(), c = x.cols();
    if (!training) {
      std::vector<Real> inv_std(c);
      for (std::size_t j = 0; j < c; ++j)
        inv_std[j] = Real(1) / std::sqrt(run_var.data()[j] + eps);
      std::vector<Real> v(n * c);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
          v[i * c + j] = (x.data()[i * c + j] - run_mean.data()[j]) * inv_std[j] *
                             gamma.data()[j] +
                         beta.data()[j];
      num::Node<Real>*px = x.node(), *pg = gamma.node(), *pb = beta.node();
      std::vector<Real> mean_c(run_mean.data()), scale_c(c);
      for (std::size_t j = 0; j < c; ++j) scale_c[j] = inv_std[j];
      return num::detail::make_op<Real>(
          x.shape(), std::move(v), {x, gamma, beta},
          [px, pg, pb, n, c, mean_c = std::move(mean_c), scale_c = std::move(scale_c)](
              const std::vector<Real>& g, GradientMap<Real>& gm) {
            if (px->requires_grad) {
              auto& gx = gm.accumulate(px);
              for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j)
                  gx[i * c + j] += g[i * c + j] * scale_c[j] * pg->value[j];
            }
            if (pg->requires_grad) {
              auto& gg = gm.accumulate(pg);
              for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j)
                  gg[j] += g[i * c + j] * (px->value[i * c + j] - mean_c[j]) * scale_c[j];
            }
            if (pb->requires_grad) {
              auto& gb = gm.accumulate(pb);
              for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
            }
          });
    }
    // Training: batch statistics.
    std::vector<Real> mu(c, Real(0)), var(c, Real(0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) mu[j] += x.data()[i * c + j];
    for (std::size_t j = 0; j < c; ++j) mu[j] /= Real(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        Real d = x.data()[i * c + j] - mu[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) var[j] /= Real(n);
    for (std::size_t j = 0; j < c; ++j) {
      run_mean.mutable_data()[j] = momentum * run_mean.data()[j] + (Real(1) - momentum) * mu[j];
      run_var.mutable_data()[j] = momentum * run_var.data()[j] + (Real(1) - momentum) * var[j];
    }
    std::vector<Real> inv_std(c), xhat(n * c), v(n * c);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = Real(1) / std::sqrt(var[j] + eps);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        xhat[i * c + j] = (x.data()[i * c + j] - mu[j]) * inv_std[j];
        v[i * c + j] = xhat[i * c + j] * gamma.data()[j] + beta.data()[j];
      }
    num::Node<Real>*px = x.node(), *pg = gamma.node(), *pb = beta.node();
    return num::detail::make_op<Real>(
        x.shape(), std::move(v), {x, gamma, beta},
        [px, pg, pb, n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
            const std::vector<Real>& g, GradientMap<Real>& gm) {
          if (pg->requires_grad) {
            auto& gg = gm.accumulate(pg);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
          }
          if (pb->requires_grad) {
            auto& gb = gm.accumulate(pb);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
          }
          if (px->requires_grad) {
            auto& gx = gm.accumulate(px);
            std::vector<Real> sum_g(c, Real(0)), sum_gx(c, Real(0));
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < c; ++j) {
                Real dxhat = g[i * c + j] * pg->value[j];
                sum_g[j] += dxhat;
                sum_gx[j] += dxhat * xhat[i * c + j];
              }
            const Real inv_n = Real(1) / Real(n);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < c; ++j) {
                Real dxhat = g[i * c + j] * pg->value[j];
                gx[i * c + j] += inv_std[j] * (dxhat - inv_n * sum_g[j] -
                                               inv_n * xhat[i * c + j] * sum_gx[j]);
              }
          }
        });
  }

  void collect(ParamMap<Real>& pm, const std::string& prefix) {
    pm.add(prefix + ".gamma", gamma);
    pm.add(prefix + ".beta", beta);
    pm.add(prefix + ".run_mean", run_mean, /*trainable=*/false);
    pm.add(prefix + ".run_var", run_var, /*trainable=*/false);
  }
};

enum class Activation { kRelu, kLeakyRelu02, kNone };

template <typename Real>
Tensor<Real> activate(const Tensor<Real>& x, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return num::relu(x);
    case Activation::kLeakyRelu02:
      return num::leaky_relu(x, Real(0.2));
    case Activation::kNone:
      return x;
  }
  return x;
}

/// Stack of [Linear -> BatchNorm -> activation] blocks.
template <typename Real>
struct Mlp {
  std::vector<Linear<Real>> linears;
  std::vector<BatchNorm<Real>> bns;
  Activation act = Activation::kRelu;

  Mlp() = default;
  Mlp(const std::vector<std::size_t>& widths, Activation a, std::mt19937_64& rng) : act(a) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      linears.emplace_back(widths[i], widths[i + 1], rng);
      bns.emplace_back(widths[i + 1]);
    }
  }

  Tensor<Real> forward(Tensor<Real> x, bool training) {
    for (std::size_t i = 0; i < linears.size(); ++i) {
      x = linears[i].forward(x);
      x = bns[i].forward(x, training);
      x = activate(x, act);
    }
    return x;
  }

  void collect(ParamMap<Real>& pm, const std::string& prefix) {
    for (std::size_t i = 0; i < linears.size(); ++i) {
      linears[i].collect(pm, prefix + ".fc" + std::to_string(i));
      bns[i].collect(pm, prefix + ".bn" + std::to_string(i));
    }
  }
};

/// Adam with bias correction and L2 weight decay folded into the gradient.
template <typename Real>
struct Adam {
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
  Real weight_decay = Real(1e-6);
  std::int64_t step_count = 0;
  std::vector<std::vector<Real>> m, v;  // parallel to trainable entries

  void step(ParamMap<Real>& params, const GradientMap<Real>& grads, Real lr) {
    if (lr <= Real(0)) num::op_fail("adam_step", "learning rate must be positive");
    if (m.empty()) {
      for (auto& e : params.entries)
        if (e.trainable) {
          m.emplace_back(e.tensor.size(), Real(0));
          v.emplace_back(e.tensor.size(), Real(0));
        }
    }
    // NaN scan first so a poisoned step leaves every parameter untouched.
    {
      std::size_t k = 0;
      for (auto& e : params.entries) {
        if (!e.trainable) continue;
        const std::vector<Real>* g = grads.find(e.tensor.node());
        if (g)
          for (Real x : *g)
            if (std::isnan(x))
              throw std::runtime_error("adam_step: NaN gradient in parameter block '" +
                                       e.name + "'");
        ++k;
      }
    }
    ++step_count;
    const Real bc1 = Real(1) - std::pow(beta1, Real(step_count));
    const Real bc2 = Real(1) - std::pow(beta2, Real(step_count));
    std::size_t k = 0;
    for (auto& e : params.entries) {
      if (!e.trainable) continue;
      const std::vector<Real>* g = grads.find(e.tensor.node());
      auto& p = e.tensor.mutable_data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        Real gi = (g ? (*g)[i] : Real(0)) + weight_decay * p[i];
        m[k][i] = beta1 * m[k][i] + (Real(1) - beta1) * gi;
        v[k][i] = beta2 * v[k][i] + (Real(1) - beta2) * gi * gi;
        Real mhat = m[k][i] / bc1;
        Real vhat = v[k][i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
      ++k;
    }
  }
};

// ---------------------------------------------------------------------------
// Checkpoint container: magic "PAROT1", uint64 block count, then per block
// uint32 name length + UTF-8 name + uint32 rank + uint64 extents +
// little-endian float32 payload. Bit-exact round trip.

namespace detail {
template <typename T>
void write_le(std::ostream& os, T v) {
  // Little-endian host assumed (x86); asserted at build time.
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: unexpected end of file");
  return v;
}
}  // namespace detail

inline constexpr char kCheckpointMagic[6] = {'P', 'A', 'R', 'O', 'T', '1'};

struct CheckpointBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

inline void save_checkpoint(const std::string& path,
                            const std::vector<CheckpointBlock>& blocks) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint64_t>(os, blocks.size());
  for (const auto& b : blocks) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(b.name.size()));
    os.write(b.name.data(), std::streamsize(b.name.size()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(b.shape.size()));
    for (auto e : b.shape) detail::write_le<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(b.data.data()),
             std::streamsize(b.data.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

inline std::vector<CheckpointBlock> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, kCheckpointMagic, 6) != 0)
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  auto count = detail::read_le<std::uint64_t>(is);
  std::vector<CheckpointBlock> blocks;
  blocks.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointBlock b;
    auto name_len = detail::read_le<std::uint32_t>(is);
    b.name.resize(name_len);
    is.read(b.name.data(), name_len);
    auto rank = detail::read_le<std::uint32_t>(is);
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      b.shape.push_back(std::size_t(detail::read_le<std::uint64_t>(is)));
      n *= b.shape.back();
    }
    b.data.resize(n);
    is.read(reinterpret_cast<char*>(b.data.data()), std::streamsize(n * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated block '" + b.name + "'");
    blocks.push_back(std::move(b));
  }
  return blocks;
}

template <typename Real>
void save_params(const std::string& path, const ParamMap<Real>& params) {
  std::vector<CheckpointBlock> blocks;
  blocks.reserve(params.entries.size());
  for (const auto& e : params.entries) {
    CheckpointBlock b;
    b.name = e.name;
    b.shape = e.tensor.shape();
    b.data.reserve(e.tensor.size());
    for (Real x : e.tensor.data()) b.data.push_back(float(x));
    blocks.push_back(std::move(b));
  }
  save_checkpoint(path, blocks);
}

template <typename Real>
void load_params(const std::string& path, ParamMap<Real>& params) {
  auto blocks = load_checkpoint(path);
  if (blocks.size() != params.entries.size())
    throw std::runtime_error("checkpoint: block count " + std::to_string(blocks.size()) +
                             " does not match model (" +
                             std::to_string(params.entries.size()) + " blocks)");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& e = params.entries[i];
    const auto& b = blocks[i];
    if (b.name != e.name || b.shape != e.tensor.shape())
      throw std::runtime_error("checkpoint: mismatch at block '" + b.name +
                               "' (model expects '" + e.name + "' " +
                               num::detail::shape_str(e.tensor.shape()) + ")");
    auto& dst = e.tensor.mutable_data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = Real(b.data[j]);
  }
}

}  // namespace parot::nn
