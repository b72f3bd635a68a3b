// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// Interventional negatives on the visual graph. A draw of cond ~ U[0, 1)
// against delta picks either a structure intervention (edge targets
// permuted, then a full forward pass on the rewired graph) or a feature
// intervention (one chunk index overwritten on every node at layer 0, then
// the remaining layers on the original edges).

#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dign/autodiff.hpp"
#include "dign/dgn.hpp"
#include "dign/graph.hpp"
#include "dign/rng.hpp"

namespace dign {

enum class InterventionKind { structure, feature_neighbor, feature_noise };

inline std::string to_string(InterventionKind k) {
  switch (k) {
    case InterventionKind::structure: return "structure";
    case InterventionKind::feature_neighbor: return "feature_neighbor";
    case InterventionKind::feature_noise: return "feature_noise";
  }
  return "?";
}

struct StructureIntervention {
  std::vector<Edge> edges;
  /// Set when there was nothing to rewire (no edges).
  bool degenerate = false;
};

/// Keeps every source in place and permutes the multiset of targets.
inline StructureIntervention structure_intervene(const std::vector<Edge>& edges, Rng& rng) {
  StructureIntervention out{edges, edges.empty()};
  if (edges.size() < 2) return out;

  std::vector<std::size_t> targets;
  for (const auto& e : edges) targets.push_back(e.tgt);
  const bool distinct = std::set<std::size_t>(targets.begin(), targets.end()).size() >= 2;

  std::vector<std::size_t> perm = targets;
  for (int attempt = 0; attempt < 16; ++attempt) {
    perm = targets;
    std::shuffle(perm.begin(), perm.end(), rng);
    if (!distinct || perm != targets) break;
  }
  // Self-loops take the next edge's target instead.
  const std::size_t E = edges.size();
  for (int pass = 0; pass < 4; ++pass) {
    bool clean = true;
    for (std::size_t e = 0; e < E; ++e) {
      if (edges[e].src == perm[e]) {
        std::swap(perm[e], perm[(e + 1) % E]);
        clean = false;
      }
    }
    if (clean) break;
  }
  for (std::size_t e = 0; e < E; ++e) out.edges[e].tgt = perm[e];
  return out;
}

/// Overwrites chunk `k` of node i with chunk k of node donors[i] (when set) or
/// with `fill` row i (when given). Everything else passes through.
inline Var replace_chunk(const Var& x, std::size_t K, std::size_t k, const std::vector<std::optional<std::size_t>>& donors,
                         const std::optional<Tensor>& fill) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols() / K;
  if (k >= K) throw ContractError("replace_chunk: chunk index out of range");
  Tensor y = xv;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = 0; q < c; ++q) {
      if (fill) {
        y(i, k * c + q) = (*fill)(i, q);
      } else if (donors[i]) {
        y(i, k * c + q) = xv(*donors[i], k * c + q);
      }
    }
  }
  const bool filled = fill.has_value();
  return Var::op(std::move(y), {x}, [=](const Tensor&, const Tensor& g, InputValues, GradSinks gs) {
    if (!gs[0]) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t col = 0; col < K * c; ++col) {
        const bool in_chunk = col / c == k;
        if (!in_chunk) {
          (*gs[0])(i, col) += g(i, col);
        } else if (!filled) {
          const std::size_t src = donors[i] ? *donors[i] : i;
          (*gs[0])(src, col) += g(i, col);
        }
      }
  });
}

/// Chunk k of every node with neighbors is replaced, simultaneously, by chunk k
/// of a uniformly drawn neighbor.
inline Var feature_intervene_neighbor(const Var& layer0, const std::vector<std::vector<std::size_t>>& neighbors,
                                      std::size_t K, std::size_t k, Rng& rng) {
  std::vector<std::optional<std::size_t>> donors(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    if (!neighbors[i].empty()) donors[i] = neighbors[i][uniform_index(rng, neighbors[i].size())];
  }
  return replace_chunk(layer0, K, k, donors, std::nullopt);
}

/// Chunk k of every node becomes l2_normalize(relu(N(0, I))).
inline Var feature_intervene_noise(const Var& layer0, std::size_t K, std::size_t k, Rng& rng) {
  const std::size_t n = layer0.value().rows(), c = layer0.value().cols() / K;
  Tensor fill({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    auto row = fill.row(i);
    for (double& v : row) v = std::max(0.0, normal01(rng));
    const double nrm = std::max(norm2(row), kNormEps);
    for (double& v : row) v /= nrm;
  }
  return replace_chunk(layer0, K, k, std::vector<std::optional<std::size_t>>(n), fill);
}

/// Which intervention a batch uses.
struct InterventionPlan {
  InterventionKind kind = InterventionKind::structure;
  std::size_t chunk = 0;
};

/// cond ~ U[0,1); cond >= delta selects structure, otherwise a feature
/// intervention on a uniform chunk with a uniform choice of sub-type.
inline InterventionPlan draw_intervention_plan(double delta, std::size_t K, Rng& rng) {
  if (delta < 0.0 || delta > 1.0) throw ContractError("delta must lie in [0, 1]");
  InterventionPlan plan;
  const double cond = uniform01(rng);
  if (cond >= delta) return plan;
  plan.chunk = uniform_index(rng, K);
  plan.kind = uniform01(rng) < 0.5 ? InterventionKind::feature_neighbor : InterventionKind::feature_noise;
  return plan;
}

struct InterventionOutcome {
  InterventionKind kind = InterventionKind::structure;
  std::optional<std::size_t> chunk;       // feature kinds
  std::optional<std::vector<Edge>> edges;  // structure kind
  DgnOutput negative;
};

/// Applies `plan` to one visual graph. `clean_layer0` may carry the layer-0
/// state of the clean pass so it is not recomputed.
inline InterventionOutcome apply_intervention(const InterventionPlan& plan, const SceneGraph& graph, const Var& features,
                                              const DgnParams& params, Rng& rng, const LayerOptions& opt = {},
                                              std::optional<Var> clean_layer0 = std::nullopt) {
  InterventionOutcome out;
  out.kind = plan.kind;
  if (plan.kind == InterventionKind::structure) {
    auto rewired = structure_intervene(graph.edges, rng);
    out.negative = dgn_forward(features, NeighborPairs::from_edges(graph.node_count(), rewired.edges), params, opt);
    out.edges = std::move(rewired.edges);
    return out;
  }
  out.chunk = plan.chunk;
  const Var layer0 = clean_layer0 ? *clean_layer0 : chunk_project(features, params);
  const auto neighbors = graph.neighbors();
  const Var swapped = plan.kind == InterventionKind::feature_neighbor
                          ? feature_intervene_neighbor(layer0, neighbors, params.K, plan.chunk, rng)
                          : feature_intervene_noise(layer0, params.K, plan.chunk, rng);
  out.negative = dgn_propagate(swapped, NeighborPairs::from_sets(neighbors), params, opt);
  return out;
}

inline InterventionOutcome intervene(const SceneGraph& graph, const DgnParams& params, double delta, Rng& rng,
                                     const LayerOptions& opt = {}) {
  const InterventionPlan plan = draw_intervention_plan(delta, params.K, rng);
  return apply_intervention(plan, graph, constant(graph.features), params, rng, opt);
}

}  // namespace dign
