// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// The full grounding network: phrase and visual disentangled graph networks,
// interventional visual negatives, cross-modal fusion and the training
// objective for one instance.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dign/autodiff.hpp"
#include "dign/dgn.hpp"
#include "dign/fusion.hpp"
#include "dign/graph.hpp"
#include "dign/intervention.hpp"
#include "dign/losses.hpp"
#include "dign/rng.hpp"

namespace dign {

enum class InterventionMode { none, structure, feature, both };

inline std::string to_string(InterventionMode m) {
  switch (m) {
    case InterventionMode::none: return "none";
    case InterventionMode::structure: return "structure";
    case InterventionMode::feature: return "feature";
    case InterventionMode::both: return "both";
  }
  return "?";
}

inline InterventionMode intervention_mode_from_string(const std::string& s) {
  if (s == "none") return InterventionMode::none;
  if (s == "structure") return InterventionMode::structure;
  if (s == "feature") return InterventionMode::feature;
  if (s == "both") return InterventionMode::both;
  throw ConfigError("unknown intervention mode '" + s + "'");
}

struct ModelConfig {
  std::size_t K = 4;
  std::size_t L = 2;
  std::size_t d_t = 32;
  std::size_t d_v = 32;
  std::size_t d_out = 64;
  std::size_t heads = 4;
  /// Cross-modal fusion on; off compares the disentangled embeddings directly.
  bool fuse = true;

  void validate() const {
    if (K == 0 || d_out % K != 0) throw ConfigError("K must divide d_out");
    if (heads == 0 || d_out % heads != 0) throw ConfigError("head_count must divide d_out");
    if (d_t == 0 || d_v == 0) throw ConfigError("input dimensions must be positive");
  }
};

struct DignModel {
  ModelConfig config;
  DgnParams phrase_dgn;
  DgnParams visual_dgn;
  FusionParams fusion;

  static DignModel init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DignModel m;
    m.config = cfg;
    Rng rng = derive_rng(seed, {0x1417u});
    m.phrase_dgn = DgnParams::init(cfg.K, cfg.L, cfg.d_t, cfg.d_out, rng);
    m.visual_dgn = DgnParams::init(cfg.K, cfg.L, cfg.d_v, cfg.d_out, rng);
    m.fusion = FusionParams::init(cfg.heads, cfg.d_out, rng);
    return m;
  }

  /// Every learnable tensor, in a fixed order.
  std::vector<NamedParam> named_parameters() const {
    auto out = phrase_dgn.named("phrase_dgn");
    auto v = visual_dgn.named("visual_dgn");
    auto f = fusion.named("fusion");
    out.insert(out.end(), v.begin(), v.end());
    out.insert(out.end(), f.begin(), f.end());
    return out;
  }
};

struct ForwardOptions {
  bool training = false;
  double tau = 0.2;
  double dgn_dropout = 0.5;
  double fusion_dropout = 0.1;
  /// Intervened negatives are added when set.
  std::optional<InterventionPlan> plan;
  Rng* dropout_rng = nullptr;
  Rng* intervention_rng = nullptr;
};

struct InstanceForward {
  DgnOutput phrase;
  DgnOutput visual;
  Var c_phrase;
  Var c_visual;
  Var similarities;      // n × m, clean regions only
  Var all_similarities;  // n × m or n × 2m with intervened regions appended
  std::optional<InterventionOutcome> intervention;
  std::vector<PositiveMatch> positives;
  Var l_ind_T, l_ind_V, l_ground, total;

  LossBreakdown breakdown() const {
    return {l_ind_T.value().item(), l_ind_V.value().item(), l_ground.value().item(), total.value().item()};
  }

  bool matchable() const {
    for (const auto& p : positives)
      if (!p.matchable) return false;
    return true;
  }
};

inline InstanceForward forward_instance(const DignModel& model, const GroundingInstance& inst,
                                        const ForwardOptions& opt = {}) {
  const ModelConfig& cfg = model.config;
  if (inst.phrase_graph.feature_dim() != cfg.d_t || inst.visual_graph.feature_dim() != cfg.d_v) {
    throw DimensionError("instance feature widths do not match the model");
  }
  const LayerOptions layer_opt{opt.training, opt.dgn_dropout, opt.dropout_rng};
  const FusionOptions fusion_opt{opt.training, opt.fusion_dropout, opt.dropout_rng};

  InstanceForward f;
  const Var phrase_x = constant(inst.phrase_graph.features);
  const Var visual_x = constant(inst.visual_graph.features);
  f.phrase = dgn_forward(phrase_x, NeighborPairs::from_edges(inst.phrase_count(), inst.phrase_graph.edges),
                         model.phrase_dgn, layer_opt);
  f.visual = dgn_forward(visual_x, NeighborPairs::from_edges(inst.region_count(), inst.visual_graph.edges),
                         model.visual_dgn, layer_opt);

  if (cfg.fuse) {
    const auto fused = fuse(f.phrase.embedding, f.visual.embedding, model.fusion, fusion_opt);
    f.c_phrase = fused.phrase;
    f.c_visual = fused.visual;
  } else {
    f.c_phrase = f.phrase.embedding;
    f.c_visual = f.visual.embedding;
  }
  f.similarities = similarity_matrix(f.c_phrase, f.c_visual);
  f.all_similarities = f.similarities;

  if (opt.plan) {
    if (!opt.intervention_rng) throw ContractError("interventions need an rng");
    f.intervention = apply_intervention(*opt.plan, inst.visual_graph, visual_x, model.visual_dgn,
                                        *opt.intervention_rng, layer_opt, f.visual.state.layers.front());
    const Var& h_neg = f.intervention->negative.embedding;
    const Var c_neg =
        cfg.fuse ? multihead_cross_attention(h_neg, f.phrase.embedding, model.fusion.visual, fusion_opt).output : h_neg;
    // The clean phrase representation scores both the clean and the intervened regions.
    f.all_similarities = concat_cols({f.similarities, similarity_matrix(f.c_phrase, c_neg)});
  }

  f.positives = inst.positives();
  std::vector<std::size_t> pos;
  for (const auto& p : f.positives) pos.push_back(p.index);
  f.l_ind_T = independence_loss(f.phrase.embedding, cfg.K);
  f.l_ind_V = independence_loss(f.visual.embedding, cfg.K);
  f.l_ground = infonce_loss(f.all_similarities, pos, opt.tau);
  f.total = add_n({f.l_ind_T, f.l_ind_V, f.l_ground});
  return f;
}

/// Highest-scoring proposal per phrase; ties go to the lowest index.
inline std::vector<std::size_t> predict_from_scores(const Tensor& scores) {
  std::vector<std::size_t> out(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.cols(); ++j)
      if (scores(i, j) > scores(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

}  // namespace dign
