#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
// Scalar type is a template parameter: float for training paths, double for
// invariance and gradient tests.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

namespace parot::num {

template <typename Real>
class GradientMap;

template <typename Real>
struct Node {
  std::vector<std::size_t> shape;
  std::vector<Real> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<Real>>> parents;
  // Accumulates d(loss)/d(parent) given d(loss)/d(this).
  std::function<void(const std::vector<Real>&, GradientMap<Real>&)> backward;
};

/// Gradients of one backward sweep, keyed by node. Kept outside the nodes so
/// that independent tapes over shared parameters do not interfere.
template <typename Real>
class GradientMap {
 public:
  std::vector<Real>& accumulate(const Node<Real>* n) {
    auto& g = grads_[n];
    if (g.empty()) g.assign(n->value.size(), Real(0));
    return g;
  }
  const std::vector<Real>* find(const Node<Real>* n) const {
    auto it = grads_.find(n);
    return it == grads_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Node<Real>*, std::vector<Real>> grads_;
};

namespace detail {
inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ")";
  return os.str();
}
}  // namespace detail

[[noreturn]] inline void op_fail(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(std::vector<std::size_t> shape, std::vector<Real> data,
                     bool requires_grad = false) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    if (n != data.size())
      op_fail("Tensor::from", "shape " + detail::shape_str(shape) +
                                  " does not match data length " +
                                  std::to_string(data.size()));
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return from(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
  }

  static Tensor scalar(Real v) { return from({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }
  const std::vector<Real>& data() const { return node_->value; }
  /// Leaf mutation only (initialization, optimizer updates). Graphs built
  /// afterwards see the new values; existing tapes must not be replayed.
  std::vector<Real>& mutable_data() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  Real item() const {
    if (size() != 1) op_fail("Tensor::item", "tensor is not scalar");
    return node_->value[0];
  }
  Node<Real>* node() const { return node_.get(); }
  std::shared_ptr<Node<Real>> node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<Real>> node_;
};

/// Topologically ordered record of the differentiable operations reachable
/// from one output node (inputs first, output last).
template <typename Real>
struct Tape {
  std::vector<Node<Real>*> order;

  static Tape record(Node<Real>* root) {
    Tape tape;
    if (!root->requires_grad) return tape;
    std::unordered_set<const Node<Real>*> done;
    // Iterative post-order DFS over grad-requiring parents.
    std::vector<std::pair<Node<Real>*, std::size_t>> stack{{root, 0}};
    std::unordered_set<const Node<Real>*> on_stack{root};
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      bool descended = false;
      while (next < node->parents.size()) {
        Node<Real>* p = node->parents[next++].get();
        if (p->requires_grad && !done.count(p) && !on_stack.count(p)) {
          stack.push_back({p, 0});
          on_stack.insert(p);
          descended = true;
          break;
        }
      }
      if (!descended && next >= node->parents.size()) {
        done.insert(node);
        on_stack.erase(node);
        tape.order.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }
};

/// Reverse sweep from a scalar loss. Returns the gradient of every
/// grad-requiring tensor reachable from it.
template <typename Real>
GradientMap<Real> backward(const Tensor<Real>& loss) {
  if (loss.size() != 1)
    op_fail("backward", "loss must be scalar, got shape " +
                            detail::shape_str(loss.shape()));
  GradientMap<Real> grads;
  if (!loss.requires_grad()) return grads;
  Tape<Real> tape = Tape<Real>::record(loss.node());
  grads.accumulate(loss.node())[0] = Real(1);
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    Node<Real>* n = *it;
    const std::vector<Real>* g = grads.find(n);
    if (g && n->backward) n->backward(*g, grads);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Op helpers

namespace detail {

template <typename Real>
Tensor<Real> make_op(std::vector<std::size_t> shape, std::vector<Real> value,
                     std::vector<Tensor<Real>> parents,
                     std::function<void(const std::vector<Real>&, GradientMap<Real>&)> bw) {
  bool needs = false;
  for (const auto& p : parents) needs |= p.requires_grad();
  Tensor<Real> out = Tensor<Real>::from(std::move(shape), std::move(value), needs);
  if (needs) {
    auto* node = out.node();
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(bw);
  }
  return out;
}

template <typename Real>
using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapM = Eigen::Map<EMat<Real>>;
template <typename Real>
using CMapM = Eigen::Map<const EMat<Real>>;

inline void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) op_fail(op, what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra primitives

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require(a.shape() == b.shape(), "add",
                  "shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                      detail::shape_str(b.shape()));
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  Node<Real>*pa = a.node(), *pb = b.node();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a, b},
      [pa, pb](const std::vector<Real>& g, GradientMap<Real>& gm) {
        if (pa->requires_grad) {
          auto& ga = gm.accumulate(pa);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (pb->requires_grad) {
          auto& gb = gm.accumulate(pb);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require(a.shape() == b.shape(), "sub",
                  "shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                      detail::shape_str(b.shape()));
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  Node<Real>*pa = a.node(), *pb = b.node();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a, b},
      [pa, pb](const std::vector<Real>& g, GradientMap<Real>& gm) {
        if (pa->requires_grad) {
          auto& ga = gm.accumulate(pa);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (pb->requires_grad) {
          auto& gb = gm.accumulate(pb);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require(a.shape() == b.shape(), "mul",
                  "shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                      detail::shape_str(b.shape()));
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  Node<Real>*pa = a.node(), *pb = b.node();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a, b},
      [pa, pb](const std::vector<Real>& g, GradientMap<Real>& gm) {
        if (pa->requires_grad) {
          auto& ga = gm.accumulate(pa);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->value[i];
        }
        if (pb->requires_grad) {
          auto& gb = gm.accumulate(pb);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->value[i];
        }
      });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
  Node<Real>* pa = a.node();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a},
      [pa, c](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
      });
}

/// a: (N, C), bias: (C); adds the bias to every row.
template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& a, const Tensor<Real>& bias) {
  detail::require(a.rank() == 2 && bias.rank() == 1 && a.cols() == bias.shape()[0],
                  "add_bias",
                  "shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                      detail::shape_str(bias.shape()));
  const std::size_t n = a.rows(), c = a.cols();
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = a.data()[i * c + j] + bias.data()[j];
  Node<Real>*pa = a.node(), *pb = bias.node();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a, bias},
      [pa, pb, n, c](const std::vector<Real>& g, GradientMap<Real>& gm) {
        if (pa->requires_grad) {
          auto& ga = gm.accumulate(pa);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (pb->requires_grad) {
          auto& gb = gm.accumulate(pb);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
      });
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2, "matmul",
                  "both inputs must be rank 2, got " + detail::shape_str(a.shape()) +
                      " and " + detail::shape_str(b.shape()));
  detail::require(a.cols() == b.rows(), "matmul",
                  "inner dimensions differ: " + detail::shape_str(a.shape()) +
                      " vs " + detail::shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<Real> v(m * n);
  {
    detail::CMapM<Real> A(a.data().data(), m, k), B(b.data().data(), k, n);
    detail::MapM<Real> C(v.data(), m, n);
    C.noalias() = A * B;
  }
  Node<Real>*pa = a.node(), *pb = b.node();
  return detail::make_op<Real>(
      {m, n}, std::move(v), {a, b},
      [pa, pb, m, k, n](const std::vector<Real>& g, GradientMap<Real>& gm) {
        detail::CMapM<Real> G(g.data(), m, n);
        if (pa->requires_grad) {
          detail::CMapM<Real> B(pb->value.data(), k, n);
          detail::MapM<Real>(gm.accumulate(pa).data(), m, k).noalias() += G * B.transpose();
        }
        if (pb->requires_grad) {
          detail::CMapM<Real> A(pa->value.data(), m, k);
          detail::MapM<Real>(gm.accumulate(pb).data(), k, n).noalias() += A.transpose() * G;
        }
      });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] > Real(0) ? a.data()[i] : Real(0);
  Node<Real>* pa = a.node();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a},
      [pa](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (pa->value[i] > Real(0)) ga[i] += g[i];
      });
}

template <typename Real>
Tensor<Real> leaky_relu(const Tensor<Real>& a, Real slope) {
  detail::require(slope >= Real(0) && slope < Real(1), "leaky_relu",
                  "slope attribute out of range: " + std::to_string(slope));
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a.data()[i] > Real(0) ? a.data()[i] : slope * a.data()[i];
  Node<Real>* pa = a.node();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a},
      [pa, slope](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += pa->value[i] > Real(0) ? g[i] : slope * g[i];
      });
}

/// Concatenates rank-2 tensors with equal row counts along the channel axis.
template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.rank() == 2 && p.rows() == n, "concat_cols",
                    "row mismatch " + detail::shape_str(p.shape()));
    total += p.cols();
  }
  std::vector<Real> v(n * total);
  std::vector<std::size_t> offsets(parts.size());
  {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      offsets[k] = off;
      const std::size_t c = parts[k].cols();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
          v[i * total + off + j] = parts[k].data()[i * c + j];
      off += c;
    }
  }
  std::vector<Node<Real>*> pn;
  std::vector<std::size_t> pc;
  for (const auto& p : parts) {
    pn.push_back(p.node());
    pc.push_back(p.cols());
  }
  return detail::make_op<Real>(
      {n, total}, std::move(v), parts,
      [pn, pc, offsets, n, total](const std::vector<Real>& g, GradientMap<Real>& gm) {
        for (std::size_t k = 0; k < pn.size(); ++k) {
          if (!pn[k]->requires_grad) continue;
          auto& gp = gm.accumulate(pn[k]);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < pc[k]; ++j)
              gp[i * pc[k] + j] += g[i * total + offsets[k] + j];
        }
      });
}

/// Stacks rank-2 tensors with equal column counts on top of each other.
template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  detail::require(!parts.empty(), "concat_rows", "no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.rank() == 2 && p.cols() == c, "concat_rows",
                    "column mismatch " + detail::shape_str(p.shape()));
    total += p.rows();
  }
  std::vector<Real> v;
  v.reserve(total * c);
  std::vector<Node<Real>*> pn;
  std::vector<std::size_t> counts;
  for (const auto& p : parts) {
    v.insert(v.end(), p.data().begin(), p.data().end());
    pn.push_back(p.node());
    counts.push_back(p.data().size());
  }
  return detail::make_op<Real>(
      {total, c}, std::move(v), parts,
      [pn, counts](const std::vector<Real>& g, GradientMap<Real>& gm) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < pn.size(); ++k) {
          if (pn[k]->requires_grad) {
            auto& gp = gm.accumulate(pn[k]);
            for (std::size_t i = 0; i < counts[k]; ++i) gp[i] += g[off + i];
          }
          off += counts[k];
        }
      });
}

/// a: (G*K, C) -> (G, C), max over each group of K consecutive rows.
/// Ties resolve to the lowest row index. Argmax rows are exposed for tests.
template <typename Real>
Tensor<Real> max_rows_grouped(const Tensor<Real>& a, std::size_t k,
                              std::vector<std::uint32_t>* argmax_out = nullptr) {
  detail::require(a.rank() == 2 && k > 0 && a.rows() % k == 0, "max_rows_grouped",
                  "rows of " + detail::shape_str(a.shape()) +
                      " not divisible by group size " + std::to_string(k));
  const std::size_t g_count = a.rows() / k, c = a.cols();
  std::vector<Real> v(g_count * c);
  std::vector<std::uint32_t> arg(g_count * c);
  for (std::size_t g = 0; g < g_count; ++g)
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = g * k;
      Real bv = a.data()[best * c + j];
      for (std::size_t r = 1; r < k; ++r) {
        Real x = a.data()[(g * k + r) * c + j];
        if (x > bv) {
          bv = x;
          best = g * k + r;
        }
      }
      v[g * c + j] = bv;
      arg[g * c + j] = static_cast<std::uint32_t>(best);
    }
  if (argmax_out) *argmax_out = arg;
  Node<Real>* pa = a.node();
  return detail::make_op<Real>(
      {g_count, c}, std::move(v), {a},
      [pa, arg = std::move(arg), c](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[arg[i] * c + i % c] += g[i];
      });
}

/// a: (G*K, C) -> (G, C), sum over each group of K consecutive rows.
template <typename Real>
Tensor<Real> sum_rows_grouped(const Tensor<Real>& a, std::size_t k) {
  detail::require(a.rank() == 2 && k > 0 && a.rows() % k == 0, "sum_rows_grouped",
                  "rows of " + detail::shape_str(a.shape()) +
                      " not divisible by group size " + std::to_string(k));
  const std::size_t g_count = a.rows() / k, c = a.cols();
  std::vector<Real> v(g_count * c, Real(0));
  for (std::size_t g = 0; g < g_count; ++g)
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t j = 0; j < c; ++j) v[g * c + j] += a.data()[(g * k + r) * c + j];
  Node<Real>* pa = a.node();
  return detail::make_op<Real>(
      {g_count, c}, std::move(v), {a},
      [pa, k, c](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        const std::size_t g_count = g.size() / c;
        for (std::size_t gi = 0; gi < g_count; ++gi)
          for (std::size_t r = 0; r < k; ++r)
            for (std::size_t j = 0; j < c; ++j)
              ga[(gi * k + r) * c + j] += g[gi * c + j];
      });
}

/// Row selection with repetition; backward is scatter-add.
template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& a, const std::vector<std::size_t>& idx) {
  detail::require(a.rank() == 2, "gather_rows", "input must be rank 2");
  const std::size_t c = a.cols();
  std::vector<Real> v(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::require(idx[i] < a.rows(), "gather_rows",
                    "index " + std::to_string(idx[i]) + " out of range for " +
                        detail::shape_str(a.shape()));
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = a.data()[idx[i] * c + j];
  }
  Node<Real>* pa = a.node();
  return detail::make_op<Real>(
      {idx.size(), c}, std::move(v), {a},
      [pa, idx, c](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t j = 0; j < c; ++j) ga[idx[i] * c + j] += g[i * c + j];
      });
}

/// Row-wise dot product of two (N, C) tensors -> (N, 1).
template <typename Real>
Tensor<Real> rowdot(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require(a.shape() == b.shape() && a.rank() == 2, "rowdot",
                  "shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                      detail::shape_str(b.shape()));
  const std::size_t n = a.rows(), c = a.cols();
  std::vector<Real> v(n, Real(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) v[i] += a.data()[i * c + j] * b.data()[i * c + j];
  Node<Real>*pa = a.node(), *pb = b.node();
  return detail::make_op<Real>(
      {n, std::size_t(1)}, std::move(v), {a, b},
      [pa, pb, n, c](const std::vector<Real>& g, GradientMap<Real>& gm) {
        if (pa->requires_grad) {
          auto& ga = gm.accumulate(pa);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * pb->value[i * c + j];
        }
        if (pb->requires_grad) {
          auto& gb = gm.accumulate(pb);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[i * c + j] += g[i] * pa->value[i * c + j];
        }
      });
}

/// Multiplies row i of a (N, C) tensor by the constant scalar s[i].
template <typename Real>
Tensor<Real> rowscale(const Tensor<Real>& a, const std::vector<Real>& s) {
  detail::require(a.rank() == 2 && a.rows() == s.size(), "rowscale",
                  "scale length " + std::to_string(s.size()) + " vs " +
                      detail::shape_str(a.shape()));
  const std::size_t n = a.rows(), c = a.cols();
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = a.data()[i * c + j] * s[i];
  Node<Real>* pa = a.node();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a},
      [pa, s, n, c](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] * s[i];
      });
}

/// Row-wise 3D cross product: out_i = a_i x b_i.
template <typename Real>
Tensor<Real> cross3(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require(a.shape() == b.shape() && a.rank() == 2 && a.cols() == 3, "cross3",
                  "inputs must be (N, 3), got " + detail::shape_str(a.shape()) +
                      " and " + detail::shape_str(b.shape()));
  const std::size_t n = a.rows();
  auto cross = [](const Real* x, const Real* y, Real* out) {
    out[0] = x[1] * y[2] - x[2] * y[1];
    out[1] = x[2] * y[0] - x[0] * y[2];
    out[2] = x[0] * y[1] - x[1] * y[0];
  };
  std::vector<Real> v(n * 3);
  for (std::size_t i = 0; i < n; ++i) cross(&a.data()[i * 3], &b.data()[i * 3], &v[i * 3]);
  Node<Real>*pa = a.node(), *pb = b.node();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a, b},
      [pa, pb, n, cross](const std::vector<Real>& g, GradientMap<Real>& gm) {
        // d/da [g . (a x b)] = b x g, d/db = g x a.
        for (std::size_t i = 0; i < n; ++i) {
          if (pa->requires_grad) {
            Real t[3];
            cross(&pb->value[i * 3], &g[i * 3], t);
            auto& ga = gm.accumulate(pa);
            for (int j = 0; j < 3; ++j) ga[i * 3 + j] += t[j];
          }
          if (pb->requires_grad) {
            Real t[3];
            cross(&g[i * 3], &pa->value[i * 3], t);
            auto& gb = gm.accumulate(pb);
            for (int j = 0; j < 3; ++j) gb[i * 3 + j] += t[j];
          }
        }
      });
}

/// Row-wise unit normalization of (N, 3) vectors. Rows with norm below
/// `min_norm` are replaced by the corresponding fallback axis, flagged, and
/// receive zero gradient.
template <typename Real>
Tensor<Real> rownormalize(const Tensor<Real>& a,
                          const std::vector<std::array<Real, 3>>& fallback,
                          std::vector<std::uint8_t>* degenerate = nullptr,
                          Real min_norm = Real(1e-8)) {
  detail::require(a.rank() == 2 && a.cols() == 3 && fallback.size() == a.rows(),
                  "rownormalize", "expected (N, 3) input with per-row fallback");
  const std::size_t n = a.rows();
  std::vector<Real> v(n * 3);
  std::vector<std::uint8_t> degen(n, 0);
  std::vector<Real> inv_norm(n, Real(0));
  for (std::size_t i = 0; i < n; ++i) {
    const Real* x = &a.data()[i * 3];
    Real nrm = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    if (nrm < min_norm) {
      degen[i] = 1;
      for (int j = 0; j < 3; ++j) v[i * 3 + j] = fallback[i][j];
    } else {
      inv_norm[i] = Real(1) / nrm;
      for (int j = 0; j < 3; ++j) v[i * 3 + j] = x[j] * inv_norm[i];
    }
  }
  if (degenerate) *degenerate = degen;
  Node<Real>* pa = a.node();
  std::vector<Real> unit = v;  // captured for the backward projection
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a},
      [pa, n, degen = std::move(degen), inv_norm = std::move(inv_norm),
       unit = std::move(unit)](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        for (std::size_t i = 0; i < n; ++i) {
          if (degen[i]) continue;
          const Real* y = &unit[i * 3];
          Real dot = g[i * 3] * y[0] + g[i * 3 + 1] * y[1] + g[i * 3 + 2] * y[2];
          for (int j = 0; j < 3; ++j)
            ga[i * 3 + j] += inv_norm[i] * (g[i * 3 + j] - dot * y[j]);
        }
      });
}

/// Applies a constant per-row rotation: out_i = a_i * R_i (row convention).
/// R_i is a row-major 3x3 matrix; not differentiable with respect to R.
template <typename Real>
Tensor<Real> row_rotate(const Tensor<Real>& a,
                        const std::vector<std::array<Real, 9>>& rotations) {
  detail::require(a.rank() == 2 && a.cols() == 3 && rotations.size() == a.rows(),
                  "row_rotate", "expected (N, 3) input with one rotation per row");
  const std::size_t n = a.rows();
  std::vector<Real> v(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* x = &a.data()[i * 3];
    const auto& r = rotations[i];
    for (int j = 0; j < 3; ++j) v[i * 3 + j] = x[0] * r[j] + x[1] * r[3 + j] + x[2] * r[6 + j];
  }
  Node<Real>* pa = a.node();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a},
      [pa, n, rotations](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        for (std::size_t i = 0; i < n; ++i) {
          const auto& r = rotations[i];
          // grad_in = grad_out * R^T
          for (int j = 0; j < 3; ++j)
            ga[i * 3 + j] += g[i * 3] * r[j * 3] + g[i * 3 + 1] * r[j * 3 + 1] +
                             g[i * 3 + 2] * r[j * 3 + 2];
        }
      });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real s = 0;
  for (Real x : a.data()) s += x;
  Node<Real>* pa = a.node();
  return detail::make_op<Real>(
      {1}, {s}, {a}, [pa](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        for (auto& x : ga) x += g[0];
      });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  return scale(sum(a), Real(1) / Real(a.size()));
}

/// Sum of squared entries, as a scalar.
template <typename Real>
Tensor<Real> sumsq(const Tensor<Real>& a) {
  Real s = 0;
  for (Real x : a.data()) s += x * x;
  Node<Real>* pa = a.node();
  return detail::make_op<Real>(
      {1}, {s}, {a}, [pa](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += Real(2) * pa->value[i] * g[0];
      });
}

/// Mean softmax cross-entropy over rows of (B, C) logits.
template <typename Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits,
                                   const std::vector<int>& labels) {
  detail::require(logits.rank() == 2 && logits.rows() == labels.size(),
                  "softmax_cross_entropy",
                  "labels length " + std::to_string(labels.size()) + " vs logits " +
                      detail::shape_str(logits.shape()));
  const std::size_t b = logits.rows(), c = logits.cols();
  std::vector<Real> probs(b * c);
  Real loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    detail::require(labels[i] >= 0 && std::size_t(labels[i]) < c, "softmax_cross_entropy",
                    "label " + std::to_string(labels[i]) + " out of range");
    const Real* row = &logits.data()[i * c];
    Real mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    Real denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    Real log_denom = std::log(denom);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - mx) / denom;
    loss -= (row[labels[i]] - mx - log_denom);
  }
  loss /= Real(b);
  Node<Real>* pl = logits.node();
  return detail::make_op<Real>(
      {1}, {loss}, {logits},
      [pl, probs = std::move(probs), labels, b, c](const std::vector<Real>& g,
                                                   GradientMap<Real>& gm) {
        auto& gl = gm.accumulate(pl);
        const Real inv_b = Real(1) / Real(b);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            Real d = probs[i * c + j] - (std::size_t(labels[i]) == j ? Real(1) : Real(0));
            gl[i * c + j] += g[0] * d * inv_b;
          }
      });
}

/// Inverted-scaling dropout; identity in eval mode or at p == 0.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& a, Real p, std::mt19937_64& rng, bool training) {
  detail::require(p >= Real(0) && p < Real(1), "dropout",
                  "drop probability out of range: " + std::to_string(p));
  if (!training || p == Real(0)) return a;
  const Real keep = Real(1) - p;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::uint8_t> mask(a.size());
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    mask[i] = u(rng) >= double(p);
    v[i] = mask[i] ? a.data()[i] / keep : Real(0);
  }
  Node<Real>* pa = a.node();
  return detail::make_op<Real>(
      a.shape(), std::move(v), {a},
      [pa, mask = std::move(mask), keep](const std::vector<Real>& g, GradientMap<Real>& gm) {
        auto& ga = gm.accumulate(pa);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (mask[i]) ga[i] += g[i] / keep;
      });
}

}  // namespace parot::num
