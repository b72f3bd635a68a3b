// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// Drivers built on the trainer: gradient certification on a tiny model,
// ablation and K sweeps, and routing-weight attribution export.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dign/config.hpp"
#include "dign/gradcheck.hpp"
#include "dign/model.hpp"
#include "dign/synthetic.hpp"
#include "dign/trainer.hpp"

namespace dign {

// ---------------------------------------------------------------------------
// Gradient certification

struct GradcheckOptions {
  bool dropout = false;
  double h = 1e-5;
  std::uint64_t seed = 7;
};

struct GradcheckResult {
  bool skipped = false;
  std::string message;
  GradCheckReport report;
};

inline SyntheticConfig tiny_scene_config(std::uint64_t seed) {
  SyntheticConfig s;
  s.n = 3;
  s.m = 5;
  s.d_t = 8;
  s.d_v = 8;
  s.motif_count = 2;
  s.class_count = 3;
  s.noise_sigma = 0.1;
  s.seed = seed;
  return s;
}

inline ModelConfig tiny_model_config() { return {2, 2, 8, 8, 8, 2, true}; }

/// Total loss of one tiny instance, summed over a structure, a
/// neighbor-replacement and a noise-fill intervention so every code path
/// contributes a gradient.
inline GradcheckResult run_gradcheck(const GradcheckOptions& opt = {}) {
  GradcheckResult res;
  if (opt.dropout) {
    res.skipped = true;
    res.message = "gradcheck skipped: dropout makes the loss non-deterministic";
    return res;
  }
  const GroundingInstance inst = generate_scene(tiny_scene_config(opt.seed), 0);
  const DignModel model = DignModel::init(tiny_model_config(), opt.seed);
  const std::vector<InterventionPlan> plans = {{InterventionKind::structure, 0},
                                               {InterventionKind::feature_neighbor, 1},
                                               {InterventionKind::feature_noise, 0}};
  auto loss_fn = [&]() {
    std::vector<Var> parts;
    for (std::size_t i = 0; i < plans.size(); ++i) {
      Rng rng = derive_rng(opt.seed, {0x9cu, i});
      ForwardOptions f;
      f.plan = plans[i];
      f.intervention_rng = &rng;
      parts.push_back(forward_instance(model, inst, f).total);
    }
    return add_n(parts);
  };
  res.report = finite_diff_check(loss_fn, model.named_parameters(), opt.h);
  std::ostringstream msg;
  msg << "max relative error " << res.report.max_rel_error << " over " << res.report.checked
      << " coordinates, " << res.report.excluded << " excluded at relu kinks";
  res.message = msg.str();
  return res;
}

// ---------------------------------------------------------------------------
// Datasets for sweeps

struct SplitData {
  std::vector<GroundingInstance> train;
  std::vector<GroundingInstance> test;
};

/// Files named in the config win; otherwise the planted generator is run with
/// the seed shifted by `offset`. The held-out split has no nuisance bias.
inline SplitData load_or_generate(const ExperimentConfig& cfg, std::uint64_t offset = 0) {
  SplitData d;
  SyntheticConfig scene = cfg.data.scene;
  scene.seed += offset;
  if (!cfg.train.train_path.empty()) {
    d.train = load_dataset(cfg.train.train_path);
  } else {
    d.train = generate_dataset(scene, cfg.data.train_count, 0);
  }
  if (!cfg.train.test_path.empty()) {
    d.test = load_dataset(cfg.train.test_path);
  } else {
    SyntheticConfig held_out = scene;
    held_out.bias_strength = 0.0;
    d.test = generate_dataset(held_out, cfg.data.test_count, kTestIndexBase);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Ablations

inline const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> names = {"full", "k1", "nofuse", "cmt", "struct", "feat"};
  return names;
}

/// full: chunked DGN + fusion + both interventions; k1: full with one chunk;
/// nofuse: DGN embeddings compared directly, no interventions; cmt: DGN +
/// fusion; struct / feat: cmt plus one intervention family.
inline TrainConfig variant_config(TrainConfig base, const std::string& name) {
  if (name == "full") {
    base.fuse = true;
    base.interventions = InterventionMode::both;
  } else if (name == "k1") {
    base.K = 1;
    base.fuse = true;
    base.interventions = InterventionMode::both;
  } else if (name == "nofuse") {
    base.fuse = false;
    base.interventions = InterventionMode::none;
  } else if (name == "cmt") {
    base.fuse = true;
    base.interventions = InterventionMode::none;
  } else if (name == "struct") {
    base.fuse = true;
    base.interventions = InterventionMode::structure;
  } else if (name == "feat") {
    base.fuse = true;
    base.interventions = InterventionMode::feature;
  } else {
    throw ConfigError("unknown variant '" + name + "'");
  }
  base.validate();
  return base;
}

struct SweepRow {
  std::string name;
  std::vector<double> accuracies;  // one per seed
  double median = 0.0;
};

struct SweepTable {
  std::vector<std::uint64_t> seeds;
  std::vector<SweepRow> rows;

  const SweepRow& row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.name == name) return r;
    throw ContractError("no row named '" + name + "'");
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline Json to_json(const SweepTable& t) {
  Json rows = Json::array();
  for (const auto& r : t.rows) rows.push_back({{"name", r.name}, {"accuracies", r.accuracies}, {"median", r.median}});
  return {{"seeds", t.seeds}, {"rows", rows}};
}

inline std::string to_text(const SweepTable& t) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "variant";
  for (auto s : t.seeds) out << "\tseed" << s;
  out << "\tmedian\n";
  for (const auto& r : t.rows) {
    out << r.name;
    for (double a : r.accuracies) out << '\t' << a;
    out << '\t' << r.median << '\n';
  }
  return out.str();
}

using SweepProgress = std::function<void(const std::string& name, std::uint64_t seed, double accuracy)>;

/// Seed s shifts both the data seed and the training seed by s, so every
/// row sees the same datasets.
inline SweepTable run_sweep(const ExperimentConfig& cfg, const std::vector<std::pair<std::string, TrainConfig>>& rows,
                            const std::vector<std::uint64_t>& seeds, const SweepProgress& progress = {}) {
  if (rows.empty()) throw ContractError("sweep needs at least one row");
  if (seeds.empty()) throw ContractError("sweep needs at least one seed");
  SweepTable table;
  table.seeds = seeds;
  for (const auto& [name, _] : rows) table.rows.push_back({name, {}, 0.0});
  for (auto s : seeds) {
    const SplitData data = load_or_generate(cfg, s);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      TrainConfig tc = rows[r].second;
      tc.seed += s;
      const TrainState st = train(tc, data.train);
      const double acc = evaluate(st.model, data.test, tc.tau).accuracy;
      table.rows[r].accuracies.push_back(acc);
      if (progress) progress(rows[r].first, s, acc);
    }
  }
  for (auto& r : table.rows) r.median = median(r.accuracies);
  return table;
}

inline std::vector<std::uint64_t> default_seeds(std::size_t count = 5) {
  std::vector<std::uint64_t> s(count);
  std::iota(s.begin(), s.end(), std::uint64_t{0});
  return s;
}

inline SweepTable ablate(const ExperimentConfig& cfg, const std::vector<std::string>& variants,
                         const std::vector<std::uint64_t>& seeds = default_seeds(),
                         const SweepProgress& progress = {}) {
  if (variants.empty()) throw ContractError("ablate needs at least one variant");
  std::vector<std::pair<std::string, TrainConfig>> rows;
  for (const auto& v : variants) rows.emplace_back(v, variant_config(cfg.train, v));
  return run_sweep(cfg, rows, seeds, progress);
}

/// Full model at each K; K=1 coincides with the "k1" ablation row.
inline SweepTable k_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& ks,
                          const std::vector<std::uint64_t>& seeds = default_seeds(),
                          const SweepProgress& progress = {}) {
  if (ks.empty()) throw ContractError("k_sweep needs at least one K");
  std::vector<std::pair<std::string, TrainConfig>> rows;
  for (auto k : ks) {
    TrainConfig tc = variant_config(cfg.train, "full");
    tc.K = k;
    tc.validate();
    rows.emplace_back("K=" + std::to_string(k), tc);
  }
  return run_sweep(cfg, rows, seeds, progress);
}

// ---------------------------------------------------------------------------
// Attribution

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

struct EdgeAttribution {
  Edge edge;
  std::vector<double> weights;  // routing weights averaged over layers
  std::size_t motif = 0;        // argmax chunk
};

/// Routing weights of relation (tgt, src) averaged over layers. Routing is
/// symmetric in the pair, so the direction does not matter.
inline std::vector<EdgeAttribution> edge_attributions(const SceneGraph& graph, const DgnOutput& out,
                                                      std::size_t K) {
  std::vector<EdgeAttribution> res;
  for (const auto& e : graph.edges) {
    EdgeAttribution a{e, std::vector<double>(K, 0.0), 0};
    if (e.src != e.tgt && !out.routing.empty()) {
      for (const auto& layer : out.routing) {
        const auto p = layer.pairs.find(e.tgt, e.src);
        if (!p) throw ContractError("edge missing from routing pairs");
        for (std::size_t k = 0; k < K; ++k) a.weights[k] += layer.weights(*p, k);
      }
      for (double& w : a.weights) w /= static_cast<double>(out.routing.size());
    }
    a.motif = argmax(a.weights);
    res.push_back(std::move(a));
  }
  return res;
}

inline Json routing_to_json(const RoutingWeights& routing) {
  Json layers = Json::array();
  for (std::size_t l = 0; l < routing.size(); ++l) {
    const auto& r = routing[l];
    Json rel = Json::array();
    for (std::size_t p = 0; p < r.pairs.size(); ++p) {
      const auto row = r.weights.row(p);
      rel.push_back({{"node", r.pairs.node[p]},
                     {"neighbor", r.pairs.nbr[p]},
                     {"weights", std::vector<double>(row.begin(), row.end())}});
    }
    layers.push_back({{"layer", l + 1}, {"relations", rel}});
  }
  return layers;
}

inline Json attributions_to_json(const std::vector<EdgeAttribution>& attrs) {
  Json out = Json::array();
  for (const auto& a : attrs) {
    Json e = {{"src", a.edge.src}, {"tgt", a.edge.tgt}, {"weights", a.weights}, {"motif", a.motif}};
    if (a.edge.label) e["label"] = *a.edge.label;
    out.push_back(e);
  }
  return out;
}

/// Routing weights of both graphs per layer plus the dominant chunk per edge,
/// from a deterministic forward pass.
inline Json explain(const DignModel& model, const GroundingInstance& inst) {
  if (inst.phrase_graph.feature_dim() != model.config.d_t || inst.visual_graph.feature_dim() != model.config.d_v) {
    throw DimensionError("scene feature widths do not match the model");
  }
  const std::size_t K = model.config.K;
  const auto phrase = dgn_forward(inst.phrase_graph, model.phrase_dgn);
  const auto visual = dgn_forward(inst.visual_graph, model.visual_dgn);
  return {{"K", K},
          {"L", model.config.L},
          {"phrase",
           {{"layers", routing_to_json(phrase.routing)},
            {"edges", attributions_to_json(edge_attributions(inst.phrase_graph, phrase, K))}}},
          {"visual",
           {{"layers", routing_to_json(visual.routing)},
            {"edges", attributions_to_json(edge_attributions(inst.visual_graph, visual, K))}}}};
}

/// Adjusted Rand index of two labelings of the same items.
inline double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) throw DimensionError("adjusted_rand_index: length mismatch");
  const double n = static_cast<double>(a.size());
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
  }
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [_, c] : joint) index += pairs(c);
  for (const auto& [_, c] : ca) sa += pairs(c);
  for (const auto& [_, c] : cb) sb += pairs(c);
  const double expected = n < 2.0 ? 0.0 : sa * sb / pairs(n);
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

/// ARI between argmax chunks and planted motif labels, pooled over the
/// labelled visual edges of all scenes.
inline double attribution_ari(const DignModel& model, const std::vector<GroundingInstance>& scenes) {
  std::vector<std::size_t> predicted, planted;
  for (const auto& inst : scenes) {
    const auto out = dgn_forward(inst.visual_graph, model.visual_dgn);
    for (const auto& a : edge_attributions(inst.visual_graph, out, model.config.K)) {
      if (!a.edge.label || a.edge.src == a.edge.tgt) continue;
      predicted.push_back(a.motif);
      planted.push_back(static_cast<std::size_t>(*a.edge.label));
    }
  }
  if (predicted.empty()) throw ContractError("no labelled edges to score");
  return adjusted_rand_index(predicted, planted);
}

}  // namespace dign
