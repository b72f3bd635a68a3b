// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <set>

#include "catch_amalgamated.hpp"
#include "dign/synthetic.hpp"

using namespace dign;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<double> minus(std::span<const double> a, std::span<const double> b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

// Phrase features pulled back into the visual basis, nuisance removed from
// visual features: both sides then live in one comparable space.
struct OracleView {
  std::vector<std::vector<double>> phrase, region;
};

OracleView oracle_view(const SyntheticConfig& cfg, const GroundingInstance& inst) {
  const SyntheticWorld w = make_world(cfg);
  OracleView v;
  for (std::size_t i = 0; i < inst.phrase_count(); ++i) {
    std::vector<double> x(cfg.d_v, 0.0);
    for (std::size_t c = 0; c < cfg.d_v; ++c)
      for (std::size_t r = 0; r < cfg.d_t; ++r) x[c] += w.phrase_map(r, c) * inst.phrase_graph.features(i, r);
    v.phrase.push_back(std::move(x));
  }
  for (std::size_t j = 0; j < inst.region_count(); ++j) {
    auto row = inst.visual_graph.features.row(j);
    std::vector<double> x(row.begin(), row.end());
    const double p = dot(x, w.nuisance);
    for (std::size_t c = 0; c < cfg.d_v; ++c) x[c] -= p * w.nuisance[c];
    v.region.push_back(std::move(x));
  }
  return v;
}

// Own-feature distance plus the best one-to-one pairing of neighbor features.
double context_distance(const OracleView& v, const GroundingInstance& inst, std::size_t i, std::size_t j) {
  const auto pn = inst.phrase_graph.neighbors()[i];
  const auto rn = inst.visual_graph.neighbors()[j];
  double d = norm2(minus(v.phrase[i], v.region[j]));
  if (pn.size() != rn.size()) return d + 1e6;
  std::vector<std::size_t> perm(rn.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = 1e300;
  do {
    double s = 0.0;
    for (std::size_t a = 0; a < pn.size(); ++a) s += norm2(minus(v.phrase[pn[a]], v.region[rn[perm[a]]]));
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return d + best;
}

double oracle_accuracy(const SyntheticConfig& cfg, std::size_t scenes, bool with_context) {
  std::size_t correct = 0, total = 0;
  for (std::size_t s = 0; s < scenes; ++s) {
    const auto inst = generate_scene(cfg, s);
    const auto v = oracle_view(cfg, inst);
    for (std::size_t i = 0; i < inst.phrase_count(); ++i) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t j = 0; j < inst.region_count(); ++j) {
        const double d = with_context ? context_distance(v, inst, i, j) : norm2(minus(v.phrase[i], v.region[j]));
        if (d < best_d - 1e-9) {
          best_d = d;
          best = j;
        }
      }
      correct += iou(inst.proposals[best], inst.ground_truth[i]) >= 0.5;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("generate_scene is a pure function of (config, index)") {
  SyntheticConfig cfg;
  CHECK(generate_scene(cfg, 7) == generate_scene(cfg, 7));
  CHECK_FALSE(generate_scene(cfg, 7) == generate_scene(cfg, 8));
  SyntheticConfig other = cfg;
  other.seed = 2;
  CHECK_FALSE(generate_scene(cfg, 7) == generate_scene(other, 7));
}

TEST_CASE("generated instances satisfy the data invariants") {
  SyntheticConfig cfg;
  cfg.noise_sigma = 0.3;
  for (std::size_t s = 0; s < 200; ++s) {
    const auto inst = generate_scene(cfg, s);
    REQUIRE_NOTHROW(inst.validate());
    REQUIRE(inst.phrase_count() == cfg.n);
    REQUIRE(inst.region_count() == cfg.m);
    REQUIRE(inst.true_alignment);
    const auto& align = *inst.true_alignment;
    for (std::size_t i = 0; i < cfg.n; ++i) {
      const auto pos = match_positive(inst.proposals, inst.ground_truth[i]);
      REQUIRE(pos.index == align[i]);
      REQUIRE(pos.iou >= 0.7);
      for (std::size_t j = 0; j < cfg.m; ++j)
        if (j != align[i]) REQUIRE(iou(inst.proposals[j], inst.ground_truth[i]) < 0.5);
    }
    // The phrase graph is the target subgraph of the visual graph.
    for (const auto& e : inst.phrase_graph.edges) {
      const bool found = std::any_of(inst.visual_graph.edges.begin(), inst.visual_graph.edges.end(), [&](const Edge& v) {
        return v.src == align[e.src] && v.tgt == align[e.tgt] && v.label == e.label;
      });
      REQUIRE(found);
    }
  }
}

TEST_CASE("decoys share the target hub's own features but not its context") {
  SyntheticConfig cfg;
  cfg.noise_sigma = 0.0;
  const auto inst = generate_scene(cfg, 3);
  const auto v = oracle_view(cfg, inst);
  const std::size_t hub = (*inst.true_alignment)[0];
  std::size_t twins = 0;
  for (std::size_t j = 0; j < cfg.m; ++j)
    if (j != hub && norm2(minus(v.region[j], v.region[hub])) < 1e-9) ++twins;
  CHECK(twins == (cfg.m - cfg.n) / cfg.n);
}

TEST_CASE("a context-aware oracle grounds noiseless scenes perfectly") {
  SyntheticConfig cfg;
  cfg.noise_sigma = 0.0;
  CHECK(oracle_accuracy(cfg, 200, true) == 1.0);
  // Own features alone leave the hub ambiguous among its decoy copies.
  CHECK(oracle_accuracy(cfg, 200, false) < 1.0);
}

TEST_CASE("under overwhelming noise the oracle falls to chance") {
  SyntheticConfig cfg;
  cfg.noise_sigma = 100.0;
  CHECK_THAT(oracle_accuracy(cfg, 1000, false), WithinAbs(1.0 / static_cast<double>(cfg.m), 0.02));
}

TEST_CASE("nuisance co-occurrence follows bias_strength") {
  SyntheticConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.bias_strength = 0.6;
  const SyntheticWorld w = make_world(cfg);
  std::size_t target_on = 0, target_total = 0, other_on = 0, other_total = 0;
  for (std::size_t s = 0; s < 500; ++s) {
    const auto inst = generate_scene(cfg, s);
    std::set<std::size_t> targets(inst.true_alignment->begin(), inst.true_alignment->end());
    for (std::size_t j = 0; j < cfg.m; ++j) {
      const bool on = dot(inst.visual_graph.features.row(j), w.nuisance) > 0.5;
      if (targets.count(j)) {
        target_on += on;
        ++target_total;
      } else {
        other_on += on;
        ++other_total;
      }
    }
  }
  CHECK_THAT(static_cast<double>(target_on) / target_total, WithinAbs(0.8, 0.04));
  CHECK_THAT(static_cast<double>(other_on) / other_total, WithinAbs(0.2, 0.04));
}

TEST_CASE("world directions are orthonormal") {
  SyntheticConfig cfg;
  const SyntheticWorld w = make_world(cfg);
  std::vector<std::vector<double>> all = w.prototypes;
  all.insert(all.end(), w.motifs.begin(), w.motifs.end());
  all.push_back(w.nuisance);
  for (std::size_t a = 0; a < all.size(); ++a)
    for (std::size_t b = 0; b < all.size(); ++b) REQUIRE_THAT(dot(all[a], all[b]), WithinAbs(a == b ? 1.0 : 0.0, 1e-12));
}

TEST_CASE("infeasible configurations are rejected") {
  SyntheticConfig cfg;
  cfg.m = cfg.n;
  CHECK_THROWS_AS(generate_scene(cfg, 0), ConfigError);
  cfg = {};
  cfg.motif_count = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.noise_sigma = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
