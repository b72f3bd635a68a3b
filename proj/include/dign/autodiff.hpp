// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-free reverse-mode differentiation over Tensor values. Every op builds a
// node holding its value, its inputs and a closure that pushes the output
// gradient back into the inputs. `backward` walks the nodes reachable from a
// scalar root in reverse topological order.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dign/errors.hpp"
#include "dign/rng.hpp"
#include "dign/tensor.hpp"

namespace dign {

/// Receives gradient for input i, or nullptr when input i needs none.
using GradSinks = std::span<Tensor* const>;
using InputValues = std::span<const Tensor* const>;
using BackwardFn = std::function<void(const Tensor& out_value, const Tensor& grad_out, InputValues inputs, GradSinks grads)>;

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  bool requires_grad = false;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

}  // namespace detail

class Var {
 public:
  Var() = default;

  const Tensor& value() const { return node_->value; }
  /// Gradient accumulated by the last `backward`; zeros if nothing reached this node.
  const Tensor& grad() const { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool defined() const { return static_cast<bool>(node_); }

  /// In-place access for optimizers and finite differencing. Only valid on leaves.
  Tensor& mutable_value() {
    if (!node_->inputs.empty()) throw ContractError("mutable_value on a non-leaf node");
    return node_->value;
  }
  void zero_grad() { node_->grad = Tensor(); }

  /// Identity of the underlying node, stable across copies.
  const void* id() const { return node_.get(); }

  static Var leaf(Tensor value, bool requires_grad) {
    Var v;
    v.node_ = std::make_shared<detail::Node>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
  }

  static Var op(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    Var v;
    v.node_ = std::make_shared<detail::Node>();
    v.node_->value = std::move(value);
    bool any = false;
    for (auto& in : inputs) any = any || in.requires_grad();
    v.node_->requires_grad = any;
    if (any) {
      v.node_->inputs.reserve(inputs.size());
      for (auto& in : inputs) v.node_->inputs.push_back(std::move(in.node_));
      v.node_->backward = std::move(fn);
    }
    return v;
  }

 private:
  friend void backward(const Var& loss);
  std::shared_ptr<detail::Node> node_;
};

inline Var constant(Tensor value) { return Var::leaf(std::move(value), false); }
inline Var parameter(Tensor value) { return Var::leaf(std::move(value), true); }

/// Populates `grad()` of every differentiable node reachable from the scalar
/// `loss`. Gradients accumulate into leaves; call zero_grad between steps.
inline void backward(const Var& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw ContractError("backward requires a scalar root");
  }
  if (!loss.requires_grad()) return;

  using NodePtr = detail::Node*;
  std::vector<NodePtr> order;
  std::unordered_set<NodePtr> seen;
  // Iterative post-order DFS; inputs visited in declaration order.
  std::vector<std::pair<NodePtr, std::size_t>> stack{{loss.node_.get(), 0}};
  seen.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodePtr child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodePtr n : order) {
    if (!n->inputs.empty()) n->grad = Tensor();
  }
  loss.node_->grad_buffer()[0] += 1.0;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> sinks;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodePtr n = *it;
    if (!n->backward || n->grad.empty()) continue;
    in_values.clear();
    sinks.clear();
    for (auto& in : n->inputs) {
      in_values.push_back(&in->value);
      sinks.push_back(in->requires_grad ? &in->grad_buffer() : nullptr);
    }
    n->backward(n->value, n->grad, in_values, sinks);
  }
}

// ---------------------------------------------------------------------------
// Non-smooth point monitoring, used by the finite-difference oracle to drop
// coordinates whose perturbation crosses a relu kink.

struct KinkRecorder {
  std::vector<double> relu_inputs;
};

inline KinkRecorder*& active_kink_recorder() {
  thread_local KinkRecorder* recorder = nullptr;
  return recorder;
}

// ---------------------------------------------------------------------------
// Differentiable ops.

inline Var matmul(const Var& a, const Var& b) {
  return Var::op(matmul(a.value(), b.value()), {a, b},
                 [](const Tensor&, const Tensor& g, InputValues in, GradSinks gs) {
                   if (gs[0]) axpy_inplace(*gs[0], 1.0, matmul_nt(g, *in[1]));
                   if (gs[1]) axpy_inplace(*gs[1], 1.0, matmul_tn(*in[0], g));
                 });
}

/// A·Bᵀ, the usual linear-layer product X·Wᵀ.
inline Var matmul_nt(const Var& a, const Var& b) {
  return Var::op(matmul_nt(a.value(), b.value()), {a, b},
                 [](const Tensor&, const Tensor& g, InputValues in, GradSinks gs) {
                   if (gs[0]) axpy_inplace(*gs[0], 1.0, matmul(g, *in[1]));
                   if (gs[1]) axpy_inplace(*gs[1], 1.0, matmul_tn(g, *in[0]));
                 });
}

inline Var transpose(const Var& a) {
  return Var::op(transpose(a.value()), {a}, [](const Tensor&, const Tensor& g, InputValues, GradSinks gs) {
    if (gs[0]) axpy_inplace(*gs[0], 1.0, transpose(g));
  });
}

inline Var add(const Var& a, const Var& b) {
  return Var::op(add(a.value(), b.value()), {a, b}, [](const Tensor&, const Tensor& g, InputValues, GradSinks gs) {
    for (auto* s : gs)
      if (s) axpy_inplace(*s, 1.0, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  return Var::op(add(a.value(), scaled(b.value(), -1.0)), {a, b},
                 [](const Tensor&, const Tensor& g, InputValues, GradSinks gs) {
                   if (gs[0]) axpy_inplace(*gs[0], 1.0, g);
                   if (gs[1]) axpy_inplace(*gs[1], -1.0, g);
                 });
}

/// Elementwise sum of equally shaped tensors.
inline Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw ContractError("add_n of nothing");
  Tensor out = terms[0].value();
  for (std::size_t i = 1; i < terms.size(); ++i) axpy_inplace(out, 1.0, terms[i].value());
  return Var::op(std::move(out), terms, [](const Tensor&, const Tensor& g, InputValues, GradSinks gs) {
    for (auto* s : gs)
      if (s) axpy_inplace(*s, 1.0, g);
  });
}

inline Var scale(const Var& a, double s) {
  return Var::op(scaled(a.value(), s), {a}, [s](const Tensor&, const Tensor& g, InputValues, GradSinks gs) {
    if (gs[0]) axpy_inplace(*gs[0], s, g);
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return Var::op(std::move(out), {a, b}, [](const Tensor&, const Tensor& g, InputValues in, GradSinks gs) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (gs[0]) (*gs[0])[i] += g[i] * (*in[1])[i];
      if (gs[1]) (*gs[1])[i] += g[i] * (*in[0])[i];
    }
  });
}

/// X[N×d] + b[d] broadcast over rows.
inline Var add_row_bias(const Var& x, const Var& b) {
  const Tensor& xv = x.value();
  if (b.value().rank() != 1 || b.value().size() != xv.cols()) {
    throw DimensionError("add_row_bias: " + shape_str(xv.shape()) + " + " + shape_str(b.shape()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b.value()[c];
  return Var::op(std::move(out), {x, b}, [](const Tensor&, const Tensor& g, InputValues, GradSinks gs) {
    if (gs[0]) axpy_inplace(*gs[0], 1.0, g);
    if (gs[1])
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) (*gs[1])[c] += g(r, c);
  });
}

inline Var relu(const Var& v) {
  if (auto* rec = active_kink_recorder()) {
    rec->relu_inputs.insert(rec->relu_inputs.end(), v.value().data().begin(), v.value().data().end());
  }
  return Var::op(relu(v.value()), {v}, [](const Tensor&, const Tensor& g, InputValues in, GradSinks gs) {
    if (!gs[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i)
      if ((*in[0])[i] > 0.0) (*gs[0])[i] += g[i];
  });
}

/// Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate).
inline Var dropout(const Var& v, double rate, Rng& rng) {
  if (rate <= 0.0) return v;
  if (rate >= 1.0) throw ContractError("dropout rate must be < 1");
  Tensor mask(v.shape());
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = uniform01(rng) >= rate ? keep : 0.0;
  return mul(v, constant(std::move(mask)));
}

namespace detail {

inline void softmax_backward_row(std::span<const double> y, std::span<const double> g, std::span<double> gx) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += g[i] * y[i];
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (g[i] - s);
}

}  // namespace detail

inline Var softmax(const Var& v) {
  return Var::op(softmax(v.value()), {v}, [](const Tensor& y, const Tensor& g, InputValues, GradSinks gs) {
    if (gs[0]) detail::softmax_backward_row(y.data(), g.data(), gs[0]->data());
  });
}

inline Var softmax_rows(const Var& x) {
  return Var::op(softmax_rows(x.value()), {x}, [](const Tensor& y, const Tensor& g, InputValues, GradSinks gs) {
    if (!gs[0]) return;
    for (std::size_t r = 0; r < y.rows(); ++r) detail::softmax_backward_row(y.row(r), g.row(r), gs[0]->row(r));
  });
}

namespace detail {

// y = v / max(‖v‖, eps) over one segment.
inline void l2_normalize_backward(std::span<const double> v, std::span<const double> y, std::span<const double> g,
                                  std::span<double> gv, double eps) {
  const double n = norm2(v);
  if (n < eps) {
    for (std::size_t i = 0; i < v.size(); ++i) gv[i] += g[i] / eps;
    return;
  }
  const double gy = dot(g, y);
  for (std::size_t i = 0; i < v.size(); ++i) gv[i] += (g[i] - y[i] * gy) / n;
}

}  // namespace detail

inline Var l2_normalize(const Var& v, double eps) {
  return Var::op(l2_normalize(v.value(), eps), {v},
                 [eps](const Tensor& y, const Tensor& g, InputValues in, GradSinks gs) {
                   if (gs[0]) detail::l2_normalize_backward(in[0]->data(), y.data(), g.data(), gs[0]->data(), eps);
                 });
}

/// Columns [begin, end) of a matrix.
inline Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin >= end || end > xv.cols()) throw DimensionError("slice_cols out of range");
  const std::size_t w = end - begin;
  Tensor out({xv.rows(), w});
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = xv(r, begin + c);
  return Var::op(std::move(out), {x}, [begin, w](const Tensor&, const Tensor& g, InputValues, GradSinks gs) {
    if (!gs[0]) return;
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < w; ++c) (*gs[0])(r, begin + c) += g(r, c);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  const std::size_t rows = parts[0].value().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != rows) throw DimensionError("concat_cols row mismatch");
    total += p.value().cols();
  }
  Tensor out({rows, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
    off += pv.cols();
  }
  return Var::op(std::move(out), parts, [](const Tensor&, const Tensor& g, InputValues in, GradSinks gs) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const std::size_t w = in[i]->cols();
      if (gs[i])
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) (*gs[i])(r, c) += g(r, off + c);
      off += w;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of nothing");
  const std::size_t cols = parts[0].value().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != cols) throw DimensionError("concat_rows column mismatch");
    total += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(total * cols);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return Var::op(Tensor({total, cols}, std::move(data)), parts,
                 [](const Tensor&, const Tensor& g, InputValues in, GradSinks gs) {
                   std::size_t off = 0;
                   for (std::size_t i = 0; i < in.size(); ++i) {
                     const std::size_t n = in[i]->size();
                     if (gs[i])
                       for (std::size_t k = 0; k < n; ++k) (*gs[i])[k] += g[off + k];
                     off += n;
                   }
                 });
}

/// Row-wise layer normalization with learned gain and bias.
inline Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gain.value().size() != d || bias.value().size() != d) throw DimensionError("layer_norm_rows parameter size");
  Tensor xhat({n, d});
  std::vector<double> inv_std(n);
  Tensor out({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xv(r, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (xv(r, c) - mean) * inv_std[r];
      out(r, c) = xhat(r, c) * gain.value()[c] + bias.value()[c];
    }
  }
  return Var::op(std::move(out), {x, gain, bias},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor&, const Tensor& g,
                                                                          InputValues in, GradSinks gs) {
                   const std::size_t n = g.rows(), d = g.cols();
                   const Tensor& gamma = *in[1];
                   for (std::size_t r = 0; r < n; ++r) {
                     if (gs[0]) {
                       double sum_gh = 0.0, sum_gh_xhat = 0.0;
                       for (std::size_t c = 0; c < d; ++c) {
                         const double gh = g(r, c) * gamma[c];
                         sum_gh += gh;
                         sum_gh_xhat += gh * xhat(r, c);
                       }
                       const double invd = 1.0 / static_cast<double>(d);
                       for (std::size_t c = 0; c < d; ++c) {
                         const double gh = g(r, c) * gamma[c];
                         (*gs[0])(r, c) += inv_std[r] * (gh - invd * sum_gh - xhat(r, c) * invd * sum_gh_xhat);
                       }
                     }
                     for (std::size_t c = 0; c < d; ++c) {
                       if (gs[1]) (*gs[1])[c] += g(r, c) * xhat(r, c);
                       if (gs[2]) (*gs[2])[c] += g(r, c);
                     }
                   }
                 });
}

/// Sum of all entries, as a scalar of shape [1].
inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return Var::op(Tensor({1}, {s}), {x}, [](const Tensor&, const Tensor& g, InputValues, GradSinks gs) {
    if (gs[0])
      for (double& v : gs[0]->data()) v += g[0];
  });
}

/// ½‖x‖², a handy test objective.
inline Var half_squared_norm(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v * v;
  return Var::op(Tensor({1}, {0.5 * s}), {x}, [](const Tensor&, const Tensor& g, InputValues in, GradSinks gs) {
    if (gs[0]) axpy_inplace(*gs[0], g[0], *in[0]);
  });
}

}  // namespace dign
