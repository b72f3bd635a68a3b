// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include "catch_amalgamated.hpp"
#include "dign/dgn.hpp"
#include "dign/gradcheck.hpp"

using namespace dign;
using Catch::Matchers::WithinAbs;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Tensor randn(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = normal01(rng);
  return t;
}

SceneGraph random_graph(std::size_t n, std::size_t d, Rng& rng, double edge_p = 0.4) {
  SceneGraph g{randn({n, d}, rng), {}};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && uniform01(rng) < edge_p) g.edges.push_back({i, j, {}});
  return g;
}

// Straight-line reference forward pass over nested vectors, written from the
// layer definitions without reusing any library kernel.
Mat reference_forward(const SceneGraph& g, const DgnParams& p) {
  const std::size_t n = g.node_count(), K = p.K, c = p.chunk_dim();
  const auto nb = SceneGraph::neighbor_sets(n, g.edges);
  const Tensor& W = p.proj_weight.value();
  const Tensor& b = p.proj_bias.value();
  Mat h(n, Vec(p.d_out, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < p.d_out; ++r) {
      double s = b[r];
      for (std::size_t q = 0; q < p.d_in; ++q) s += W(r, q) * g.features(i, q);
      h[i][r] = std::max(s, 0.0);
    }
    for (std::size_t k = 0; k < K; ++k) {
      double nrm = 0.0;
      for (std::size_t q = 0; q < c; ++q) nrm += h[i][k * c + q] * h[i][k * c + q];
      nrm = std::max(std::sqrt(nrm), 1e-12);
      for (std::size_t q = 0; q < c; ++q) h[i][k * c + q] /= nrm;
    }
  }
  Mat sum = h;
  for (std::size_t l = 0; l < p.L; ++l) {
    const Tensor& E = p.ego_weight[l].value();
    const Tensor& N = p.nbr_weight[l].value();
    Mat next(n, Vec(p.d_out, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t r = 0; r < c; ++r)
          for (std::size_t q = 0; q < c; ++q) next[i][k * c + r] += E[(k * c + r) * c + q] * h[i][k * c + q];
      for (std::size_t j : nb[i]) {
        Vec logits(K, 0.0);
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t q = 0; q < c; ++q) logits[k] += h[j][k * c + q] * h[i][k * c + q];
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& v : logits) z += (v = std::exp(v - mx));
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t r = 0; r < c; ++r)
            for (std::size_t q = 0; q < c; ++q)
              next[i][k * c + r] += logits[k] / z * N[(k * c + r) * c + q] * h[j][k * c + q];
      }
      for (double& v : next[i]) v = std::max(v, 0.0);
    }
    h = next;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < p.d_out; ++r) sum[i][r] += h[i][r];
  }
  return sum;
}

}  // namespace

TEST_CASE("dgn_forward matches a straight-line reference on a 3-node path") {
  Rng rng = derive_rng(31, {});
  const DgnParams p = DgnParams::init(2, 2, 3, 4, rng);
  SceneGraph g{randn({3, 3}, rng), {{0, 1, {}}, {1, 2, {}}}};
  const auto out = dgn_forward(g, p);
  const Mat ref = reference_forward(g, p);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t r = 0; r < 4; ++r) CHECK_THAT(out.embedding.value()(i, r), WithinAbs(ref[i][r], 1e-12));
}

TEST_CASE("dgn_forward matches the reference on random graphs") {
  Rng rng = derive_rng(32, {});
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t K = 1 + trial % 4;
    const DgnParams p = DgnParams::init(K, trial % 3, 5, 3 * K, rng);
    const SceneGraph g = random_graph(2 + trial % 6, 5, rng);
    const auto out = dgn_forward(g, p);
    const Mat ref = reference_forward(g, p);
    for (std::size_t i = 0; i < g.node_count(); ++i)
      for (std::size_t r = 0; r < p.d_out; ++r) REQUIRE_THAT(out.embedding.value()(i, r), WithinAbs(ref[i][r], 1e-12));
  }
}

TEST_CASE("routing weights lie on the simplex and layer-0 chunks are unit or zero") {
  Rng rng = derive_rng(33, {});
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t K = 1 + trial % 5;
    const DgnParams p = DgnParams::init(K, 2, 4, 2 * K, rng);
    const SceneGraph g = random_graph(2 + trial % 5, 4, rng, 0.5);
    const auto out = dgn_forward(g, p);
    for (const auto& layer : out.routing)
      for (std::size_t q = 0; q < layer.pairs.size(); ++q) {
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          REQUIRE(layer.weights(q, k) >= 0.0);
          s += layer.weights(q, k);
        }
        REQUIRE_THAT(s, WithinAbs(1.0, 1e-12));
      }
    for (std::size_t i = 0; i < g.node_count(); ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const double nrm = norm2(out.state.chunk(0, i, k));
        REQUIRE((nrm == 0.0 || std::abs(nrm - 1.0) <= 1e-9));
      }
  }
}

TEST_CASE("with K = 1 every routing weight is exactly 1") {
  Rng rng = derive_rng(34, {});
  const DgnParams p = DgnParams::init(1, 3, 4, 6, rng);
  const auto out = dgn_forward(random_graph(6, 4, rng, 0.6), p);
  for (const auto& layer : out.routing)
    for (double w : layer.weights.values()) CHECK(w == 1.0);
}

TEST_CASE("dgn_forward is equivariant under node relabelling") {
  Rng rng = derive_rng(35, {});
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + trial % 6, K = 1 + trial % 3;
    const DgnParams p = DgnParams::init(K, 2, 3, 2 * K, rng);
    const SceneGraph g = random_graph(n, 3, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
    SceneGraph h{Tensor({n, 3}), {}};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t q = 0; q < 3; ++q) h.features(perm[i], q) = g.features(i, q);
    for (const auto& e : g.edges) h.edges.push_back({perm[e.src], perm[e.tgt], e.label});
    const Tensor a = dgn_forward(g, p).embedding.value();
    const Tensor b = dgn_forward(h, p).embedding.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < p.d_out; ++r) REQUIRE_THAT(b(perm[i], r), WithinAbs(a(i, r), 1e-12));
  }
}

TEST_CASE("with L = 0 the embedding is the layer-0 projection") {
  Rng rng = derive_rng(36, {});
  const DgnParams p = DgnParams::init(2, 0, 3, 4, rng);
  const SceneGraph g = random_graph(4, 3, rng);
  const auto out = dgn_forward(g, p);
  CHECK(out.routing.empty());
  CHECK(out.embedding.value() == out.state.layers[0].value());
}

TEST_CASE("isolated nodes keep only the ego path") {
  Rng rng = derive_rng(37, {});
  const DgnParams p = DgnParams::init(2, 1, 3, 4, rng);
  const SceneGraph g{randn({3, 3}, rng), {}};
  const auto out = dgn_forward(g, p);
  const Tensor expect = relu(chunk_linear(out.state.layers[0], p.ego_weight[0]).value());
  CHECK(max_abs_diff(out.state.layers[1].value(), expect) == 0.0);
}

TEST_CASE("DGN parameter gradients match central differences") {
  Rng rng = derive_rng(38, {});
  const DgnParams p = DgnParams::init(2, 2, 4, 6, rng);
  const SceneGraph g = random_graph(5, 4, rng, 0.5);
  const Tensor r = randn({5, 6}, rng);
  const auto report = finite_diff_check(
      [&] { return sum(mul(dgn_forward(g, p).embedding, constant(r))); }, p.named("dgn"));
  INFO("excluded " << report.excluded);
  CHECK(report.checked > 0);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("configuration errors") {
  Rng rng = derive_rng(39, {});
  CHECK_THROWS_AS(DgnParams::init(3, 1, 4, 8, rng), ConfigError);
  const DgnParams p = DgnParams::init(2, 1, 4, 8, rng);
  CHECK_THROWS_AS(dgn_forward(SceneGraph{Tensor({2, 3}), {}}, p), DimensionError);
  CHECK_THROWS_AS(routing_weights(std::vector<double>(4), std::vector<double>(6), 2), DimensionError);
}
