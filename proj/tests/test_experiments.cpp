// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "catch_amalgamated.hpp"
#include "dign/experiments.hpp"

using namespace dign;
using Catch::Matchers::WithinAbs;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig cfg;
  cfg.data.scene = tiny_scene_config(1);
  cfg.data.train_count = 4;
  cfg.data.test_count = 3;
  cfg.train.K = 2;
  cfg.train.d_out = 8;
  cfg.train.head_count = 2;
  cfg.train.batch_size = 2;
  cfg.train.epochs = 1;
  return cfg;
}

}  // namespace

TEST_CASE("adjusted Rand index known values") {
  using L = std::vector<std::size_t>;
  CHECK(adjusted_rand_index(L{0, 0, 1, 1}, L{0, 0, 1, 1}) == 1.0);
  CHECK_THAT(adjusted_rand_index(L{0, 0, 1, 1}, L{5, 5, 2, 2}), WithinAbs(1.0, 1e-12));
  CHECK_THAT(adjusted_rand_index(L{0, 0, 1, 1}, L{0, 1, 0, 1}), WithinAbs(-0.5, 1e-12));
  CHECK_THAT(adjusted_rand_index(L{0, 0, 1, 1}, L{0, 0, 1, 2}), WithinAbs(4.0 / 7.0, 1e-12));
  CHECK(adjusted_rand_index(L{0, 0, 0}, L{0, 0, 0}) == 1.0);
  CHECK_THROWS_AS(adjusted_rand_index(L{0}, L{0, 1}), DimensionError);
}

TEST_CASE("adjusted Rand index is symmetric and at most 1") {
  Rng rng = derive_rng(71, {});
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::size_t> a(2 + trial % 30), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = uniform_index(rng, 4);
      b[i] = uniform01(rng) < 0.5 ? a[i] : uniform_index(rng, 4);
    }
    const double r = adjusted_rand_index(a, b);
    REQUIRE(r <= 1.0 + 1e-12);
    REQUIRE_THAT(r, WithinAbs(adjusted_rand_index(b, a), 1e-12));
  }
}

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS_AS(median({}), ContractError);
}

TEST_CASE("variant configurations") {
  const TrainConfig base;
  CHECK(variant_config(base, "full").interventions == InterventionMode::both);
  CHECK(variant_config(base, "full").fuse);
  CHECK(variant_config(base, "k1").K == 1);
  CHECK_FALSE(variant_config(base, "nofuse").fuse);
  CHECK(variant_config(base, "nofuse").interventions == InterventionMode::none);
  CHECK(variant_config(base, "cmt").interventions == InterventionMode::none);
  CHECK(variant_config(base, "struct").interventions == InterventionMode::structure);
  CHECK(variant_config(base, "feat").interventions == InterventionMode::feature);
  CHECK_THROWS_AS(variant_config(base, "gat"), ConfigError);
  CHECK(known_variants().size() == 6);
}

TEST_CASE("gradcheck passes on the tiny configuration and refuses dropout") {
  const auto res = run_gradcheck();
  REQUIRE_FALSE(res.skipped);
  CHECK(res.report.checked > 0);
  CHECK(res.report.max_rel_error < 1e-5);
  GradcheckOptions with_dropout;
  with_dropout.dropout = true;
  CHECK(run_gradcheck(with_dropout).skipped);
}

TEST_CASE("explain exports simplex routing weights") {
  const auto inst = generate_scene(tiny_scene_config(2), 0);
  const DignModel model = DignModel::init(tiny_model_config(), 3);
  const Json j = explain(model, inst);
  CHECK(j.at("K") == 2);
  REQUIRE(j.at("visual").at("layers").size() == 2);
  for (const char* side : {"phrase", "visual"}) {
    for (const auto& layer : j.at(side).at("layers"))
      for (const auto& rel : layer.at("relations")) {
        double s = 0.0;
        for (double w : rel.at("weights")) s += w;
        CHECK_THAT(s, WithinAbs(1.0, 1e-12));
      }
    CHECK(j.at(side).at("edges").size() ==
          (std::string(side) == "phrase" ? inst.phrase_graph.edges.size() : inst.visual_graph.edges.size()));
  }
  CHECK(j.at("visual").at("edges")[0].contains("label"));
}

TEST_CASE("with K = 1 every attribution weight is exactly 1") {
  const auto inst = generate_scene(tiny_scene_config(2), 1);
  ModelConfig mc = tiny_model_config();
  mc.K = 1;
  const DignModel model = DignModel::init(mc, 3);
  const auto out = dgn_forward(inst.visual_graph, model.visual_dgn);
  for (const auto& a : edge_attributions(inst.visual_graph, out, 1)) {
    CHECK(a.weights == std::vector<double>{1.0});
    CHECK(a.motif == 0);
  }
  // A single cluster carries no information about several planted motifs.
  CHECK_THAT(attribution_ari(model, {inst, generate_scene(tiny_scene_config(2), 2)}), WithinAbs(0.0, 1e-12));
}

TEST_CASE("a one-seed ablation produces one accuracy per row") {
  const auto cfg = tiny_experiment();
  std::size_t calls = 0;
  const auto table = ablate(cfg, {"full", "nofuse"}, {0}, [&](const std::string&, std::uint64_t, double) { ++calls; });
  CHECK(calls == 2);
  REQUIRE(table.rows.size() == 2);
  for (const auto& r : table.rows) {
    REQUIRE(r.accuracies.size() == 1);
    CHECK(r.median == r.accuracies[0]);
    CHECK(r.median >= 0.0);
    CHECK(r.median <= 1.0);
  }
  CHECK(table.row("nofuse").name == "nofuse");
  CHECK_THROWS_AS(table.row("missing"), ContractError);
  CHECK(to_text(table).find("median") != std::string::npos);
  CHECK(to_json(table).at("rows").size() == 2);
}

TEST_CASE("k_sweep rejects indivisible K") {
  auto cfg = tiny_experiment();
  CHECK_THROWS_AS(k_sweep(cfg, {3}, {0}), ConfigError);
  const auto table = k_sweep(cfg, {1, 2}, {0});
  CHECK(table.rows[0].name == "K=1");
  CHECK(table.rows[1].name == "K=2");
}

TEST_CASE("held-out split carries no nuisance bias and disjoint indices") {
  auto cfg = tiny_experiment();
  cfg.data.scene.bias_strength = 0.9;
  const auto d = load_or_generate(cfg, 0);
  CHECK(d.train.size() == 4);
  CHECK(d.test.size() == 3);
  SyntheticConfig unbiased = cfg.data.scene;
  unbiased.bias_strength = 0.0;
  CHECK(d.test[0] == generate_scene(unbiased, kTestIndexBase));
  CHECK_FALSE(d.train[0] == d.test[0]);
}
