// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// Scene graphs, boxes and grounding instances.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dign/errors.hpp"
#include "dign/tensor.hpp"

namespace dign {

/// Axis-aligned box in normalized image coordinates, (x1, y1) top-left.
struct BoundingBox {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 < x2 && y1 < y2;
  }
  double area() const { return (x2 - x1) * (y2 - y1); }
  bool contains(const BoundingBox& o) const { return x1 <= o.x1 && y1 <= o.y1 && x2 >= o.x2 && y2 >= o.y2; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct PositiveMatch {
  std::size_t index = 0;
  double iou = 0.0;
  /// False when every proposal misses the ground truth entirely.
  bool matchable = false;
};

/// The proposal overlapping `gt` most; ties go to the lowest index.
inline PositiveMatch match_positive(const std::vector<BoundingBox>& proposals, const BoundingBox& gt) {
  if (proposals.empty()) throw ContractError("match_positive needs at least one proposal");
  PositiveMatch best;
  best.iou = iou(proposals[0], gt);
  for (std::size_t i = 1; i < proposals.size(); ++i) {
    const double v = iou(proposals[i], gt);
    if (v > best.iou) best = {i, v, false};
  }
  best.matchable = best.iou > 0.0;
  return best;
}

/// Union region of several ground-truth boxes for one phrase.
inline BoundingBox merge_gt_boxes(const std::vector<BoundingBox>& boxes) {
  if (boxes.empty()) throw ContractError("merge_gt_boxes of an empty list");
  BoundingBox m = boxes[0];
  for (const auto& b : boxes) {
    m.x1 = std::min(m.x1, b.x1);
    m.y1 = std::min(m.y1, b.y1);
    m.x2 = std::max(m.x2, b.x2);
    m.y2 = std::max(m.y2, b.y2);
  }
  return m;
}

struct Edge {
  std::size_t src = 0;
  std::size_t tgt = 0;
  /// Relation label; metadata only, never read by the model.
  std::optional<int> label;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct SceneGraph {
  Tensor features;  // node_count × d
  std::vector<Edge> edges;

  std::size_t node_count() const { return features.rows(); }
  std::size_t feature_dim() const { return features.cols(); }

  /// Throws ContractError naming the first broken invariant.
  void validate(const std::string& what = "graph") const {
    if (features.rank() != 2) throw ContractError(what + ".features must be a matrix");
    if (!features.all_finite()) throw ContractError(what + ".features must be finite");
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& e : edges) {
      if (e.src >= node_count() || e.tgt >= node_count()) throw ContractError(what + ".edges: node index out of range");
      if (e.src == e.tgt) throw ContractError(what + ".edges: self-loop");
      if (!seen.emplace(e.src, e.tgt).second) throw ContractError(what + ".edges: duplicate edge");
    }
  }

  /// Undirected neighbor sets (in- plus out-edges), ascending, duplicates removed.
  std::vector<std::vector<std::size_t>> neighbors() const { return neighbor_sets(node_count(), edges); }

  static std::vector<std::vector<std::size_t>> neighbor_sets(std::size_t n, const std::vector<Edge>& edges) {
    std::vector<std::vector<std::size_t>> nb(n);
    for (const auto& e : edges) {
      nb[e.tgt].push_back(e.src);
      nb[e.src].push_back(e.tgt);
    }
    for (auto& v : nb) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return nb;
  }

  friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

struct GroundingInstance {
  SceneGraph phrase_graph;
  SceneGraph visual_graph;
  std::vector<BoundingBox> proposals;     // one per visual node
  std::vector<BoundingBox> ground_truth;  // one per phrase
  std::optional<std::vector<std::size_t>> true_alignment;

  std::size_t phrase_count() const { return phrase_graph.node_count(); }
  std::size_t region_count() const { return visual_graph.node_count(); }

  void validate() const {
    phrase_graph.validate("phrase_graph");
    visual_graph.validate("visual_graph");
    const std::size_t n = phrase_count(), m = region_count();
    if (!(m > n && n >= 1)) throw ContractError("instance needs more regions than phrases");
    if (proposals.size() != m) throw ContractError("proposals: expected one box per visual node");
    if (ground_truth.size() != n) throw ContractError("ground_truth: expected one box per phrase");
    for (const auto& b : proposals)
      if (!b.valid()) throw ContractError("proposals: invalid box");
    for (const auto& b : ground_truth)
      if (!b.valid()) throw ContractError("ground_truth: invalid box");
    if (true_alignment) {
      if (true_alignment->size() != n) throw ContractError("true_alignment: expected one index per phrase");
      for (auto a : *true_alignment)
        if (a >= m) throw ContractError("true_alignment: index out of range");
    }
  }

  /// Positive proposal for every phrase.
  std::vector<PositiveMatch> positives() const {
    std::vector<PositiveMatch> out;
    out.reserve(ground_truth.size());
    for (const auto& gt : ground_truth) out.push_back(match_positive(proposals, gt));
    return out;
  }

  friend bool operator==(const GroundingInstance&, const GroundingInstance&) = default;
};

}  // namespace dign
