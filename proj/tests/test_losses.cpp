// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "catch_amalgamated.hpp"
#include "dign/gradcheck.hpp"
#include "dign/losses.hpp"

using namespace dign;
using Catch::Matchers::WithinAbs;

namespace {

Tensor randn(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = normal01(rng);
  return t;
}

using V = std::vector<double>;

}  // namespace

TEST_CASE("correlation_coeff examples") {
  CHECK_THAT(correlation_coeff(V{1, 2, 3}, V{1, 2, 3}), WithinAbs(1.0, 1e-15));
  CHECK_THAT(correlation_coeff(V{1, 2, 3}, V{3, 2, 1}), WithinAbs(-1.0, 1e-15));
  CHECK_THAT(correlation_coeff(V{1, 2, 3, 4}, V{1, 3, 2, 4}), WithinAbs(0.8, 1e-15));
  CHECK(correlation_coeff(V{1, 1, 1}, V{1, 2, 3}) == 0.0);
  CHECK_THROWS_AS(correlation_coeff(V{1, 2}, V{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(correlation_coeff(V{1}, V{1}), ContractError);
}

TEST_CASE("correlation_coeff is bounded, symmetric and affine invariant") {
  Rng rng = derive_rng(61, {});
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + trial % 9;
    V x(n), y(n);
    for (auto& v : x) v = normal01(rng);
    for (auto& v : y) v = normal01(rng) + (trial % 3 == 0 ? x[&v - y.data()] : 0.0);
    const double r = correlation_coeff(x, y);
    REQUIRE(r >= -1.0);
    REQUIRE(r <= 1.0);
    REQUIRE(r == correlation_coeff(y, x));
    const double a = 0.1 + 5.0 * uniform01(rng), b = 10.0 * normal01(rng);
    V z = x;
    for (auto& v : z) v = a * v + b;
    REQUIRE_THAT(correlation_coeff(z, y), WithinAbs(r, 1e-9));
  }
}

TEST_CASE("independence_loss anchors") {
  SECTION("K = 1 has no pairs") {
    Rng rng = derive_rng(62, {});
    CHECK(independence_loss(constant(randn({4, 6}, rng)), 1).value()[0] == 0.0);
  }
  SECTION("identical chunks give K(K-1)/2 per node") {
    const std::size_t n = 5, K = 4, c = 3;
    Tensor h({n, K * c});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t q = 0; q < c; ++q) h(i, k * c + q) = static_cast<double>(i + q * q) + 0.5 * q;
    CHECK_THAT(independence_loss(constant(h), K).value()[0], WithinAbs(n * K * (K - 1) / 2.0, 1e-9));
  }
  SECTION("constant chunks contribute nothing") {
    CHECK(independence_loss(constant(Tensor({3, 8}, 2.0)), 4).value()[0] == 0.0);
  }
  SECTION("K must divide the width") { CHECK_THROWS_AS(independence_loss(constant(Tensor({2, 6})), 4), DimensionError); }
}

TEST_CASE("independence_loss matches a brute-force double loop") {
  Rng rng = derive_rng(63, {});
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = 1 + trial % 5, c = 2 + trial % 4, n = 1 + trial % 6;
    const Tensor h = randn({n, K * c}, rng);
    double expect = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = a + 1; b < K; ++b) {
          V x(c), y(c);
          for (std::size_t q = 0; q < c; ++q) {
            x[q] = h(i, a * c + q);
            y[q] = h(i, b * c + q);
          }
          double mx = 0, my = 0;
          for (std::size_t q = 0; q < c; ++q) {
            mx += x[q] / c;
            my += y[q] / c;
          }
          double sxy = 0, sxx = 0, syy = 0;
          for (std::size_t q = 0; q < c; ++q) {
            sxy += (x[q] - mx) * (y[q] - my);
            sxx += (x[q] - mx) * (x[q] - mx);
            syy += (y[q] - my) * (y[q] - my);
          }
          expect += sxy / std::sqrt(sxx * syy);
        }
    REQUIRE_THAT(independence_loss(constant(h), K).value()[0], WithinAbs(expect, 1e-10));
  }
}

TEST_CASE("infonce_loss anchors") {
  SECTION("uniform similarities over four terms give ln 4") {
    CHECK_THAT(infonce_loss(constant(Tensor({1, 4}, 0.3)), {2}, 0.2).value()[0], WithinAbs(std::log(4.0), 1e-9));
    CHECK_THAT(infonce_loss(constant(Tensor({3, 4}, -1.0)), {0, 1, 3}, 0.2).value()[0],
               WithinAbs(3.0 * std::log(4.0), 1e-9));
  }
  SECTION("tau 0.2, positive 1, three negatives at 0") {
    const double expect = -std::log(std::exp(5.0) / (std::exp(5.0) + 3.0));
    const double got = infonce_loss(constant(Tensor::matrix({{0, 1, 0, 0}})), {1}, 0.2).value()[0];
    CHECK_THAT(got, WithinAbs(expect, 1e-12));
    CHECK_THAT(got, WithinAbs(0.0200, 5e-5));
  }
  SECTION("a dominant positive drives the loss to zero") {
    CHECK(infonce_loss(constant(Tensor::matrix({{500, 0, 0}})), {0}, 0.2).value()[0] < 1e-300);
  }
  SECTION("inactive rows are skipped") {
    CHECK(infonce_loss(constant(Tensor::matrix({{0, 9}, {0, 0}})), {0, 0}, 1.0, {false, true}).value()[0] ==
          std::log(2.0));
  }
  SECTION("contract errors") {
    CHECK_THROWS_AS(infonce_loss(constant(Tensor({1, 2})), {0}, 0.0), ContractError);
    CHECK_THROWS_AS(infonce_loss(constant(Tensor({1, 2})), {2}, 1.0), DimensionError);
    CHECK_THROWS_AS(infonce_loss(constant(Tensor({2, 2})), {0}, 1.0), DimensionError);
  }
}

TEST_CASE("infonce_loss is non-negative") {
  Rng rng = derive_rng(64, {});
  for (std::size_t trial = 0; trial < 1000; ++trial) {
    Tensor s = randn({3, 2 + trial % 8}, rng);
    for (double& v : s.data()) v *= 20.0;
    std::vector<std::size_t> pos(3);
    for (auto& p : pos) p = uniform_index(rng, s.cols());
    const double l = infonce_loss(constant(s), pos, 0.2).value()[0];
    REQUIRE(std::isfinite(l));
    REQUIRE(l >= 0.0);
  }
}

TEST_CASE("total_loss is the unweighted sum") {
  const auto b = total_loss(0.0, 0.0, 2.5);
  CHECK(b.total == 2.5);
  const auto c = total_loss(-1.25, 0.5, 3.0);
  CHECK(c.total == c.l_ind_T + c.l_ind_V + c.l_ground);
  CHECK(c.l_ind_T == -1.25);
}

TEST_CASE("loss gradients match central differences") {
  Rng rng = derive_rng(65, {});
  Var h = parameter(randn({3, 8}, rng));
  Var s = parameter(randn({2, 6}, rng));
  SECTION("independence") {
    CHECK(finite_diff_check([&] { return independence_loss(h, 4); }, {{"h", h}}).max_rel_error < 1e-7);
  }
  SECTION("infonce") {
    CHECK(finite_diff_check([&] { return infonce_loss(s, {1, 4}, 0.2); }, {{"s", s}}).max_rel_error < 1e-7);
  }
  SECTION("total is the sum of its parts") {
    auto total = [&] { return add(add(independence_loss(h, 4), independence_loss(h, 2)), infonce_loss(s, {0, 5}, 0.2)); };
    CHECK(finite_diff_check(total, {{"h", h}, {"s", s}}).max_rel_error < 1e-7);
  }
}
