// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// Disentangled graph network. Node embeddings of width d_out are split into K
// chunks of width c = d_out / K. Layer 0 projects every node into the K
// chunk subspaces and normalizes each chunk. Each later layer routes every
// neighbor j of node i over the chunks with a softmax across k of
// <x_j,k , x_i,k> and updates chunk k from an ego term plus the routed
// neighbor messages. The output chunk is the sum of the chunk over layers.
//
// Storage convention: a layer state is an N × d_out matrix whose row i is the
// concatenation [x_i,1, ..., x_i,K].

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dign/autodiff.hpp"
#include "dign/errors.hpp"
#include "dign/gradcheck.hpp"
#include "dign/graph.hpp"
#include "dign/rng.hpp"
#include "dign/tensor.hpp"

namespace dign {

inline constexpr double kNormEps = 1e-12;

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = (2.0 * uniform01(rng) - 1.0) * bound;
  return t;
}

struct DgnParams {
  std::size_t K = 1;
  std::size_t L = 0;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  /// d_out × d_in; row block k is the chunk-k projection.
  Var proj_weight;
  Var proj_bias;
  /// Per layer, K × c × c.
  std::vector<Var> ego_weight;
  std::vector<Var> nbr_weight;

  std::size_t chunk_dim() const { return d_out / K; }

  static DgnParams init(std::size_t K, std::size_t L, std::size_t d_in, std::size_t d_out, Rng& rng) {
    if (K == 0 || d_out % K != 0) throw ConfigError("K must divide d_out");
    if (d_in == 0) throw ConfigError("d_in must be positive");
    DgnParams p;
    p.K = K;
    p.L = L;
    p.d_in = d_in;
    p.d_out = d_out;
    const std::size_t c = d_out / K;
    p.proj_weight = parameter(uniform_init({d_out, d_in}, d_in, rng));
    p.proj_bias = parameter(Tensor::zeros({d_out}));
    for (std::size_t l = 0; l < L; ++l) {
      p.ego_weight.push_back(parameter(uniform_init({K, c, c}, c, rng)));
      p.nbr_weight.push_back(parameter(uniform_init({K, c, c}, c, rng)));
    }
    return p;
  }

  std::vector<NamedParam> named(const std::string& prefix) const {
    std::vector<NamedParam> out{{prefix + ".proj_weight", proj_weight}, {prefix + ".proj_bias", proj_bias}};
    for (std::size_t l = 0; l < L; ++l) {
      out.push_back({prefix + ".layer" + std::to_string(l + 1) + ".ego_weight", ego_weight[l]});
      out.push_back({prefix + ".layer" + std::to_string(l + 1) + ".nbr_weight", nbr_weight[l]});
    }
    return out;
  }
};

/// Directed neighbor-of relations (i, j), j in N_i, grouped by i and ascending in j.
struct NeighborPairs {
  std::size_t node_count = 0;
  std::vector<std::size_t> node;
  std::vector<std::size_t> nbr;
  std::vector<std::size_t> offset;  // node_count + 1; pairs of node i are [offset[i], offset[i+1])

  std::size_t size() const { return node.size(); }

  static NeighborPairs from_sets(const std::vector<std::vector<std::size_t>>& sets) {
    NeighborPairs p;
    p.node_count = sets.size();
    p.offset.push_back(0);
    for (std::size_t i = 0; i < sets.size(); ++i) {
      for (auto j : sets[i]) {
        p.node.push_back(i);
        p.nbr.push_back(j);
      }
      p.offset.push_back(p.node.size());
    }
    return p;
  }

  static NeighborPairs from_edges(std::size_t n, const std::vector<Edge>& edges) {
    return from_sets(SceneGraph::neighbor_sets(n, edges));
  }

  /// Pair index of (i, j), if j is a neighbor of i.
  std::optional<std::size_t> find(std::size_t i, std::size_t j) const {
    for (std::size_t p = offset[i]; p < offset[i + 1]; ++p)
      if (nbr[p] == j) return p;
    return std::nullopt;
  }
};

/// Routing weights of one layer: row p holds a_{j,k} for relation pairs[p].
struct RoutingLayer {
  NeighborPairs pairs;
  Tensor weights;  // P × K, empty when there are no relations
};

using RoutingWeights = std::vector<RoutingLayer>;

/// Per-layer chunk states, layer 0 first.
struct ChunkedState {
  std::size_t K = 1;
  std::vector<Var> layers;

  std::size_t chunk_dim() const { return layers.at(0).value().cols() / K; }
  std::span<const double> chunk(std::size_t layer, std::size_t node, std::size_t k) const {
    const std::size_t c = chunk_dim();
    return layers.at(layer).value().row(node).subspan(k * c, c);
  }
};

struct DgnOutput {
  Var embedding;  // N × d_out, the disentangled embedding
  ChunkedState state;
  RoutingWeights routing;
};

// ---------------------------------------------------------------------------
// Plain kernels.

/// Softmax over the K channels of <chunks_j[k], chunks_i[k]>.
inline std::vector<double> routing_weights(std::span<const double> node_row, std::span<const double> nbr_row,
                                           std::size_t K) {
  if (node_row.size() != nbr_row.size() || node_row.size() % K != 0) {
    throw DimensionError("routing_weights: chunk dimensions differ");
  }
  const std::size_t c = node_row.size() / K;
  std::vector<double> a(K);
  for (std::size_t k = 0; k < K; ++k) a[k] = dot(nbr_row.subspan(k * c, c), node_row.subspan(k * c, c));
  softmax_inplace(a);
  return a;
}

// ---------------------------------------------------------------------------
// Differentiable chunk ops.

/// Y[i, chunk k] = W[k] · X[i, chunk k] for W of shape K × c × c.
inline Var chunk_linear(const Var& x, const Var& w) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 3 || wv.dim(1) != wv.dim(2) || wv.dim(0) * wv.dim(1) != xv.cols()) {
    throw DimensionError("chunk_linear: " + shape_str(xv.shape()) + " with " + shape_str(wv.shape()));
  }
  const std::size_t K = wv.dim(0), c = wv.dim(1), n = xv.rows();
  Tensor y({n, K * c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double* wk = &wv[k * c * c];
      const double* xi = &xv(i, k * c);
      double* yi = &y(i, k * c);
      for (std::size_t r = 0; r < c; ++r) {
        double s = 0.0;
        for (std::size_t q = 0; q < c; ++q) s += wk[r * c + q] * xi[q];
        yi[r] = s;
      }
    }
  return Var::op(std::move(y), {x, w}, [K, c, n](const Tensor&, const Tensor& g, InputValues in, GradSinks gs) {
    const Tensor& xv = *in[0];
    const Tensor& wv = *in[1];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const double* gi = &g(i, k * c);
        const double* xi = &xv(i, k * c);
        const double* wk = &wv[k * c * c];
        for (std::size_t r = 0; r < c; ++r) {
          if (gs[0]) {
            double* gx = &(*gs[0])(i, k * c);
            for (std::size_t q = 0; q < c; ++q) gx[q] += wk[r * c + q] * gi[r];
          }
          if (gs[1]) {
            double* gw = &(*gs[1])[k * c * c + r * c];
            for (std::size_t q = 0; q < c; ++q) gw[q] += gi[r] * xi[q];
          }
        }
      }
  });
}

/// l2-normalizes every (row, chunk) segment with the eps guard.
inline Var chunk_normalize(const Var& x, std::size_t K, double eps) {
  const Tensor& xv = x.value();
  if (xv.cols() % K != 0) throw DimensionError("chunk_normalize: K does not divide width");
  const std::size_t c = xv.cols() / K;
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t k = 0; k < K; ++k) {
      auto seg = xv.row(i).subspan(k * c, c);
      const double nrm = std::max(norm2(seg), eps);
      for (std::size_t q = 0; q < c; ++q) y(i, k * c + q) = seg[q] / nrm;
    }
  return Var::op(std::move(y), {x}, [K, c, eps](const Tensor& y, const Tensor& g, InputValues in, GradSinks gs) {
    if (!gs[0]) return;
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t k = 0; k < K; ++k) {
        detail::l2_normalize_backward(in[0]->row(i).subspan(k * c, c), y.row(i).subspan(k * c, c),
                                      g.row(i).subspan(k * c, c), gs[0]->row(i).subspan(k * c, c), eps);
      }
  });
}

/// R[p, :] = softmax_k <X[nbr_p, chunk k], X[node_p, chunk k]>.
inline Var routing_op(const Var& x, const NeighborPairs& pairs, std::size_t K) {
  const Tensor& xv = x.value();
  const std::size_t P = pairs.size();
  const std::size_t c = xv.cols() / K;
  Tensor r({std::max<std::size_t>(P, 1), K});
  for (std::size_t p = 0; p < P; ++p) {
    const auto a = routing_weights(xv.row(pairs.node[p]), xv.row(pairs.nbr[p]), K);
    for (std::size_t k = 0; k < K; ++k) r(p, k) = a[k];
  }
  return Var::op(std::move(r), {x}, [pairs, K, c, P](const Tensor& r, const Tensor& g, InputValues in, GradSinks gs) {
    if (!gs[0]) return;
    const Tensor& xv = *in[0];
    std::vector<double> gd(K);
    for (std::size_t p = 0; p < P; ++p) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += g(p, k) * r(p, k);
      for (std::size_t k = 0; k < K; ++k) gd[k] = r(p, k) * (g(p, k) - s);
      const std::size_t i = pairs.node[p], j = pairs.nbr[p];
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t q = 0; q < c; ++q) {
          (*gs[0])(i, k * c + q) += gd[k] * xv(j, k * c + q);
          (*gs[0])(j, k * c + q) += gd[k] * xv(i, k * c + q);
        }
    }
  });
}

/// A[i, chunk k] = sum over j in N_i (ascending) of R[(i,j), k] · Y[j, chunk k].
inline Var routed_aggregate(const Var& y, const Var& r, const NeighborPairs& pairs, std::size_t K) {
  const Tensor& yv = y.value();
  const Tensor& rv = r.value();
  const std::size_t n = yv.rows(), c = yv.cols() / K;
  Tensor a({n, yv.cols()});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = pairs.offset[i]; p < pairs.offset[i + 1]; ++p) {
      const std::size_t j = pairs.nbr[p];
      for (std::size_t k = 0; k < K; ++k) {
        const double w = rv(p, k);
        for (std::size_t q = 0; q < c; ++q) a(i, k * c + q) += w * yv(j, k * c + q);
      }
    }
  return Var::op(std::move(a), {y, r}, [pairs, K, c, n](const Tensor&, const Tensor& g, InputValues in, GradSinks gs) {
    const Tensor& yv = *in[0];
    const Tensor& rv = *in[1];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = pairs.offset[i]; p < pairs.offset[i + 1]; ++p) {
        const std::size_t j = pairs.nbr[p];
        for (std::size_t k = 0; k < K; ++k) {
          double gw = 0.0;
          for (std::size_t q = 0; q < c; ++q) {
            const double gq = g(i, k * c + q);
            gw += gq * yv(j, k * c + q);
            if (gs[0]) (*gs[0])(j, k * c + q) += rv(p, k) * gq;
          }
          if (gs[1]) (*gs[1])(p, k) += gw;
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Network.

/// Layer-0 chunks: chunk k of node i = l2_normalize(relu(W⁰_k x_i + b⁰_k)).
inline Var chunk_project(const Var& features, const DgnParams& params, double eps = kNormEps) {
  if (features.value().rank() != 2 || features.value().cols() != params.d_in) {
    throw DimensionError("chunk_project: features " + shape_str(features.shape()) + " vs d_in " +
                         std::to_string(params.d_in));
  }
  return chunk_normalize(relu(add_row_bias(matmul_nt(features, params.proj_weight), params.proj_bias)), params.K,
                         eps);
}

struct LayerOptions {
  bool training = false;
  double dropout = 0.5;
  Rng* rng = nullptr;
};

/// One disentangling layer: returns the layer-l state and its routing weights.
inline std::pair<Var, RoutingLayer> disentangle_layer(const Var& prev, const NeighborPairs& pairs,
                                                      const DgnParams& params, std::size_t layer,
                                                      const LayerOptions& opt = {}) {
  if (layer < 1 || layer > params.L) throw ContractError("disentangle_layer: layer out of range");
  const std::size_t K = params.K;
  Var pre = chunk_linear(prev, params.ego_weight[layer - 1]);
  RoutingLayer routing{pairs, Tensor()};
  if (pairs.size() > 0) {
    Var r = routing_op(prev, pairs, K);
    routing.weights = r.value();
    Var msgs = chunk_linear(prev, params.nbr_weight[layer - 1]);
    pre = add(pre, routed_aggregate(msgs, r, pairs, K));
  }
  Var out = relu(pre);
  if (opt.training && opt.dropout > 0.0) {
    if (!opt.rng) throw ContractError("training-mode dropout needs an rng");
    out = dropout(out, opt.dropout, *opt.rng);
  }
  return {out, std::move(routing)};
}

/// Runs layers 1..L from a given layer-0 state and sums the tower.
inline DgnOutput dgn_propagate(const Var& layer0, const NeighborPairs& pairs, const DgnParams& params,
                               const LayerOptions& opt = {}) {
  DgnOutput out;
  out.state.K = params.K;
  out.state.layers.push_back(layer0);
  for (std::size_t l = 1; l <= params.L; ++l) {
    auto [next, routing] = disentangle_layer(out.state.layers.back(), pairs, params, l, opt);
    out.state.layers.push_back(next);
    out.routing.push_back(std::move(routing));
  }
  out.embedding = params.L == 0 ? layer0 : add_n(out.state.layers);
  return out;
}

inline DgnOutput dgn_forward(const Var& features, const NeighborPairs& pairs, const DgnParams& params,
                             const LayerOptions& opt = {}) {
  return dgn_propagate(chunk_project(features, params), pairs, params, opt);
}

inline DgnOutput dgn_forward(const SceneGraph& graph, const DgnParams& params, const LayerOptions& opt = {}) {
  return dgn_forward(constant(graph.features), NeighborPairs::from_edges(graph.node_count(), graph.edges), params,
                     opt);
}

}  // namespace dign
