// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "catch_amalgamated.hpp"
#include "dign/rng.hpp"
#include "dign/tensor.hpp"

using namespace dign;
using Catch::Matchers::WithinAbs;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (double& v : t.data()) v = normal01(rng);
  return t;
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST_CASE("matmul of a row and a column") {
  const Tensor c = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
  REQUIRE(c.shape() == Shape{1, 1});
  CHECK(c(0, 0) == 11.0);
}

TEST_CASE("matmul with identity returns the operand") {
  Rng rng = derive_rng(3, {});
  const Tensor a = random_matrix(4, 5, rng);
  CHECK(matmul(a, Tensor::identity(5)) == a);
  CHECK(matmul(Tensor::identity(4), a) == a);
}

TEST_CASE("transposed products agree with the naive triple loop") {
  Rng rng = derive_rng(4, {});
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_matrix(3, 6, rng), b = random_matrix(5, 6, rng), c = random_matrix(3, 4, rng);
    CHECK(max_abs_diff(matmul_nt(a, b), naive_matmul(a, transpose(b))) < 1e-12);
    CHECK(max_abs_diff(matmul_tn(a, c), naive_matmul(transpose(a), c)) < 1e-12);
    CHECK(max_abs_diff(matmul(a, transpose(b)), naive_matmul(a, transpose(b))) < 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
  CHECK_THROWS_AS(matmul_nt(Tensor({2, 3}), Tensor({2, 4})), DimensionError);
  CHECK_THROWS_AS(matmul_tn(Tensor({2, 3}), Tensor({3, 3})), DimensionError);
}

TEST_CASE("tensor construction validates data length") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::matrix({{1, 2}, {3}}), DimensionError);
}

TEST_CASE("softmax") {
  SECTION("equal inputs are uniform") {
    const Tensor p = softmax(Tensor::vector({2, 2, 2, 2}));
    for (double v : p.values()) CHECK(v == 0.25);
  }
  SECTION("(ln 3, 0) gives (0.75, 0.25)") {
    const Tensor p = softmax(Tensor::vector({std::log(3.0), 0.0}));
    CHECK_THAT(p[0], WithinAbs(0.75, 1e-15));
    CHECK_THAT(p[1], WithinAbs(0.25, 1e-15));
  }
  SECTION("large inputs stay finite") {
    const Tensor p = softmax(Tensor::vector({1000.0, 999.0}));
    CHECK(p.all_finite());
    CHECK_THAT(p[0], WithinAbs(1.0 / (1.0 + std::exp(-1.0)), 1e-15));
  }
  SECTION("empty input is an error") { CHECK_THROWS(softmax(Tensor())); }
}

TEST_CASE("softmax rows lie on the simplex") {
  Rng rng = derive_rng(5, {});
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor x = random_matrix(3, 1 + trial % 7, rng);
    for (double& v : x.data()) v *= 10.0;
    const Tensor p = softmax_rows(x);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (double v : p.row(r)) {
        REQUIRE(v >= 0.0);
        s += v;
      }
      REQUIRE_THAT(s, WithinAbs(1.0, 1e-12));
    }
  }
}

TEST_CASE("l2_normalize") {
  const Tensor y = l2_normalize(Tensor::vector({3, 4}), 1e-12);
  CHECK_THAT(y[0], WithinAbs(0.6, 1e-15));
  CHECK_THAT(y[1], WithinAbs(0.8, 1e-15));
  CHECK(l2_normalize(Tensor::vector({0, 0}), 1e-12) == Tensor::vector({0, 0}));
  CHECK_THROWS_AS(l2_normalize(Tensor::vector({1}), 0.0), ContractError);
}

TEST_CASE("elementwise helpers") {
  const Tensor a = Tensor::vector({1, -2, 3});
  CHECK(relu(a) == Tensor::vector({1, 0, 3}));
  CHECK(add(a, a) == scaled(a, 2.0));
  Tensor y = Tensor::vector({1, 1, 1});
  axpy_inplace(y, 2.0, a);
  CHECK(y == Tensor::vector({3, -3, 7}));
  CHECK(dot(a.data(), a.data()) == 14.0);
  CHECK_THROWS_AS(add(a, Tensor::vector({1})), DimensionError);
}
