// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// Planted-motif grounding scenes.
//
// Every scene holds a target star (one hub, n-1 leaves, one motif per edge),
// decoy copies of that star and a few filler nodes. A node's visual feature is
// its class prototype plus the motif direction of every incident edge plus
// Gaussian noise. Decoy stars reuse the target classes but rotate the motifs
// over the leaves, so a decoy hub has exactly the target hub's own feature
// distribution and only the pairing "which neighbor class arrives through
// which motif" tells them apart. The phrase graph is the target star, with
// phrase features an isometric image of the same clean signal.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dign/errors.hpp"
#include "dign/graph.hpp"
#include "dign/rng.hpp"
#include "dign/tensor.hpp"

namespace dign {

struct SyntheticConfig {
  std::size_t n = 4;   // phrases
  std::size_t m = 12;  // regions
  std::size_t d_t = 32;
  std::size_t d_v = 32;
  std::size_t motif_count = 4;
  std::size_t class_count = 8;
  double noise_sigma = 0.1;
  /// Train-split co-occurrence bias of the nuisance direction with targets, in [0, 1].
  double bias_strength = 0.0;
  double motif_strength = 1.0;
  double nuisance_strength = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (m <= n || n < 1) throw ConfigError("synthetic scene needs m > n >= 1");
    if (motif_count < 1) throw ConfigError("motif_count must be >= 1");
    if (class_count < n) throw ConfigError("class_count must be >= n");
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
    if (bias_strength < 0.0 || bias_strength > 1.0) throw ConfigError("bias_strength must lie in [0, 1]");
    if (class_count + motif_count + 1 > d_v) throw ConfigError("d_v too small for orthogonal class/motif/nuisance bases");
    if (d_t < d_v) throw ConfigError("d_t must be >= d_v so the phrase map is an isometry");
  }
};

/// Fixed directions shared by every scene of one seed.
struct SyntheticWorld {
  std::vector<std::vector<double>> prototypes;  // class_count × d_v, orthonormal
  std::vector<std::vector<double>> motifs;      // motif_count × d_v, orthonormal
  std::vector<double> nuisance;                 // d_v
  Tensor phrase_map;                            // d_t × d_v, orthonormal columns
};

namespace detail {

inline std::vector<std::vector<double>> orthonormal_rows(std::size_t count, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = normal01(rng);
    for (const auto& b : basis) {
      const double p = dot(v, b);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= p * b[i];
    }
    const double n = norm2(v);
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

inline BoundingBox random_box(Rng& rng) {
  const double w = 0.1 + 0.3 * uniform01(rng);
  const double h = 0.1 + 0.3 * uniform01(rng);
  const double x = (1.0 - w) * uniform01(rng);
  const double y = (1.0 - h) * uniform01(rng);
  return {x, y, x + w, y + h};
}

inline BoundingBox jitter_box(const BoundingBox& b, double amount, Rng& rng) {
  const double w = b.x2 - b.x1, h = b.y2 - b.y1;
  auto j = [&](double scale) { return (2.0 * uniform01(rng) - 1.0) * amount * scale; };
  BoundingBox out{b.x1 + j(w), b.y1 + j(h), b.x2 + j(w), b.y2 + j(h)};
  out.x1 = std::clamp(out.x1, 0.0, 1.0);
  out.y1 = std::clamp(out.y1, 0.0, 1.0);
  out.x2 = std::clamp(out.x2, 0.0, 1.0);
  out.y2 = std::clamp(out.y2, 0.0, 1.0);
  if (!out.valid()) return b;
  return out;
}

}  // namespace detail

inline SyntheticWorld make_world(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng = derive_rng(cfg.seed, {0x77u});
  auto basis = detail::orthonormal_rows(cfg.class_count + cfg.motif_count + 1, cfg.d_v, rng);
  SyntheticWorld w;
  w.prototypes.assign(basis.begin(), basis.begin() + static_cast<std::ptrdiff_t>(cfg.class_count));
  w.motifs.assign(basis.begin() + static_cast<std::ptrdiff_t>(cfg.class_count),
                  basis.begin() + static_cast<std::ptrdiff_t>(cfg.class_count + cfg.motif_count));
  w.nuisance = basis.back();
  auto cols = detail::orthonormal_rows(cfg.d_v, cfg.d_t, rng);
  w.phrase_map = Tensor({cfg.d_t, cfg.d_v});
  for (std::size_t c = 0; c < cfg.d_v; ++c)
    for (std::size_t r = 0; r < cfg.d_t; ++r) w.phrase_map(r, c) = cols[c][r];
  return w;
}

/// Generator-side bookkeeping for one scene, before nodes are shuffled.
struct PlantedNode {
  std::size_t cls = 0;
  bool target = false;
  bool nuisance = false;
};

/// Deterministic in (cfg, index). Scenes with distinct indices are independent.
inline GroundingInstance generate_scene(const SyntheticConfig& cfg, std::uint64_t index) {
  cfg.validate();
  const SyntheticWorld world = make_world(cfg);
  Rng rng = derive_rng(cfg.seed, {0x5ce4eu, index});
  const std::size_t n = cfg.n, m = cfg.m, leaves = n - 1;

  // Target star: node 0 is the hub, nodes 1..n-1 leaves, all classes distinct.
  std::vector<std::size_t> classes(cfg.class_count);
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  std::shuffle(classes.begin(), classes.end(), rng);
  std::vector<std::size_t> star_class(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n));

  std::vector<std::size_t> motif_pool(cfg.motif_count);
  std::iota(motif_pool.begin(), motif_pool.end(), std::size_t{0});
  std::shuffle(motif_pool.begin(), motif_pool.end(), rng);
  std::vector<std::size_t> leaf_motif(leaves);
  for (std::size_t l = 0; l < leaves; ++l) leaf_motif[l] = motif_pool[l % cfg.motif_count];
  std::vector<bool> hub_is_src(leaves);
  for (std::size_t l = 0; l < leaves; ++l) hub_is_src[l] = uniform01(rng) < 0.5;

  std::vector<PlantedNode> nodes;
  std::vector<Edge> edges;
  auto add_star = [&](const std::vector<std::size_t>& cls, const std::vector<std::size_t>& motifs, bool target) {
    const std::size_t base = nodes.size();
    for (std::size_t i = 0; i < n; ++i) nodes.push_back({cls[i], target, false});
    for (std::size_t l = 0; l < leaves; ++l) {
      const std::size_t hub = base, leaf = base + 1 + l;
      edges.push_back(hub_is_src[l] ? Edge{hub, leaf, static_cast<int>(motifs[l])}
                                    : Edge{leaf, hub, static_cast<int>(motifs[l])});
    }
  };
  add_star(star_class, leaf_motif, true);

  const std::size_t copies = (m - n) / n;
  for (std::size_t c = 1; c <= copies; ++c) {
    std::vector<std::size_t> cls = star_class;
    std::vector<std::size_t> motifs(leaves);
    for (std::size_t l = 0; l < leaves; ++l) motifs[l] = leaf_motif[(l + c) % leaves];
    if (leaves > 0 && motifs == leaf_motif) {
      // Rotation is a no-op: perturb one leaf so the decoy differs from the target.
      if (cfg.motif_count >= 2) {
        motifs[0] = (leaf_motif[0] + c) % cfg.motif_count;
        if (motifs[0] == leaf_motif[0]) motifs[0] = (motifs[0] + 1) % cfg.motif_count;
      } else {
        cls[1] = classes[(n + c - 1) % cfg.class_count];
      }
    }
    add_star(cls, motifs, false);
  }

  // Fillers: random classes, each linked to an earlier filler.
  const std::size_t first_filler = nodes.size();
  while (nodes.size() < m) {
    const std::size_t id = nodes.size();
    nodes.push_back({uniform_index(rng, cfg.class_count), false, false});
    if (id > first_filler) {
      const std::size_t other = first_filler + uniform_index(rng, id - first_filler);
      const int motif = static_cast<int>(uniform_index(rng, cfg.motif_count));
      edges.push_back(uniform01(rng) < 0.5 ? Edge{other, id, motif} : Edge{id, other, motif});
    }
  }

  // Nuisance co-occurrence: targets with prob (1+b)/2, others (1-b)/2.
  for (auto& node : nodes) {
    const double p = node.target ? 0.5 * (1.0 + cfg.bias_strength) : 0.5 * (1.0 - cfg.bias_strength);
    node.nuisance = uniform01(rng) < p;
  }

  // Clean signals in the visual basis.
  std::vector<std::vector<double>> clean(m, std::vector<double>(cfg.d_v, 0.0));
  for (std::size_t i = 0; i < m; ++i) clean[i] = world.prototypes[nodes[i].cls];
  for (const auto& e : edges) {
    const auto& u = world.motifs[static_cast<std::size_t>(*e.label)];
    for (std::size_t d = 0; d < cfg.d_v; ++d) {
      clean[e.src][d] += cfg.motif_strength * u[d];
      clean[e.tgt][d] += cfg.motif_strength * u[d];
    }
  }

  // Shuffle visual node order.
  std::vector<std::size_t> perm(m);  // perm[old] = new
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  GroundingInstance inst;
  inst.visual_graph.features = Tensor({m, cfg.d_v});
  for (std::size_t i = 0; i < m; ++i) {
    auto row = inst.visual_graph.features.row(perm[i]);
    for (std::size_t d = 0; d < cfg.d_v; ++d) {
      double v = clean[i][d];
      if (nodes[i].nuisance) v += cfg.nuisance_strength * world.nuisance[d];
      row[d] = v;
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    auto row = inst.visual_graph.features.row(i);
    for (double& v : row) v += cfg.noise_sigma * normal01(rng);
  }
  for (const auto& e : edges) inst.visual_graph.edges.push_back({perm[e.src], perm[e.tgt], e.label});
  std::sort(inst.visual_graph.edges.begin(), inst.visual_graph.edges.end(),
            [](const Edge& a, const Edge& b) { return std::pair(a.src, a.tgt) < std::pair(b.src, b.tgt); });

  // Phrase graph: the target star, features mapped isometrically into phrase space.
  inst.phrase_graph.features = Tensor({n, cfg.d_t});
  for (std::size_t i = 0; i < n; ++i) {
    auto row = inst.phrase_graph.features.row(i);
    for (std::size_t r = 0; r < cfg.d_t; ++r) {
      double s = 0.0;
      for (std::size_t d = 0; d < cfg.d_v; ++d) s += world.phrase_map(r, d) * clean[i][d];
      row[r] = s + cfg.noise_sigma * normal01(rng);
    }
  }
  for (std::size_t l = 0; l < leaves; ++l) inst.phrase_graph.edges.push_back(edges[l]);

  // Boxes: targets get a box and a jittered ground truth; every other proposal
  // overlaps every ground truth by less than 0.5.
  std::vector<BoundingBox> box_old(m);
  std::vector<BoundingBox> gt(n);
  // Targets are also kept clear of each other's ground truth.
  auto clear_of_targets = [&](std::size_t i) {
    for (std::size_t j = 0; j < i; ++j)
      if (iou(box_old[i], gt[j]) >= 0.5 || iou(box_old[j], gt[i]) >= 0.5) return false;
    return true;
  };
  for (std::size_t i = 0; i < n; ++i) {
    do {
      box_old[i] = detail::random_box(rng);
      do {
        gt[i] = detail::jitter_box(box_old[i], 0.05, rng);
      } while (iou(gt[i], box_old[i]) < 0.7);
    } while (!clear_of_targets(i));
  }
  auto clear_of_gt = [&](const BoundingBox& b) {
    return std::all_of(gt.begin(), gt.end(), [&](const BoundingBox& g) { return iou(b, g) < 0.5; });
  };
  for (std::size_t i = n; i < m; ++i) {
    const BoundingBox& near = box_old[i % n];
    BoundingBox b;
    int tries = 0;
    do {
      b = tries < 32 ? detail::jitter_box(near, 0.6, rng) : detail::random_box(rng);
      ++tries;
    } while (!clear_of_gt(b));
    box_old[i] = b;
  }
  inst.proposals.resize(m);
  for (std::size_t i = 0; i < m; ++i) inst.proposals[perm[i]] = box_old[i];
  inst.ground_truth = gt;
  std::vector<std::size_t> align(n);
  for (std::size_t i = 0; i < n; ++i) align[i] = perm[i];
  inst.true_alignment = align;
  return inst;
}

/// Scenes [first, first + count) of one configuration.
inline std::vector<GroundingInstance> generate_dataset(const SyntheticConfig& cfg, std::size_t count,
                                                       std::uint64_t first = 0) {
  std::vector<GroundingInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(cfg, first + i));
  return out;
}

}  // namespace dign
