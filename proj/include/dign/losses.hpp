// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dign/autodiff.hpp"
#include "dign/errors.hpp"
#include "dign/tensor.hpp"

namespace dign {

/// Variances below this make a pair contribute zero correlation.
inline constexpr double kMinVariance = 1e-12;

/// Pearson correlation Cov(x,y)/sqrt(D(x)·D(y)) with sample moments;
/// 0 when either sample variance is below kMinVariance.
inline double correlation_coeff(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("correlation_coeff: length mismatch");
  if (x.size() < 2) throw ContractError("correlation_coeff needs at least two entries");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx / (n - 1.0) < kMinVariance || syy / (n - 1.0) < kMinVariance) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace detail {

// Adds g·∂ρ/∂x and g·∂ρ/∂y into gx, gy. Returns ρ.
inline double correlation_backward(std::span<const double> x, std::span<const double> y, double g,
                                   std::span<double> gx, std::span<double> gy) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx / (n - 1.0) < kMinVariance || syy / (n - 1.0) < kMinVariance) return 0.0;
  const double denom = std::sqrt(sxx * syy);
  const double rho = sxy / denom;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double cx = x[i] - mx, cy = y[i] - my;
    gx[i] += g * (cy / denom - rho * cx / sxx);
    gy[i] += g * (cx / denom - rho * cy / syy);
  }
  return rho;
}

}  // namespace detail

/// Sum over nodes and chunk pairs k < k' of correlation_coeff(h_i,k, h_i,k').
inline Var independence_loss(const Var& embedding, std::size_t K) {
  const Tensor& h = embedding.value();
  if (K == 0 || h.cols() % K != 0) throw DimensionError("independence_loss: K does not divide width");
  const std::size_t c = h.cols() / K;
  double total = 0.0;
  if (K > 1) {
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t k2 = k + 1; k2 < K; ++k2)
          total += correlation_coeff(h.row(i).subspan(k * c, c), h.row(i).subspan(k2 * c, c));
  }
  return Var::op(Tensor({1}, {total}), {embedding}, [K, c](const Tensor&, const Tensor& g, InputValues in, GradSinks gs) {
    if (!gs[0] || K < 2) return;
    const Tensor& h = *in[0];
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t k2 = k + 1; k2 < K; ++k2)
          detail::correlation_backward(h.row(i).subspan(k * c, c), h.row(i).subspan(k2 * c, c), g[0],
                                       gs[0]->row(i).subspan(k * c, c), gs[0]->row(i).subspan(k2 * c, c));
  });
}

/// Sum over active rows i of -log softmax(S_i / tau)[positive_i]; every column
/// of a row is in the denominator, the positive included.
inline Var infonce_loss(const Var& similarities, const std::vector<std::size_t>& positives, double tau,
                        const std::vector<bool>& active = {}) {
  if (!(tau > 0.0)) throw ContractError("infonce_loss requires tau > 0");
  const Tensor& s = similarities.value();
  if (positives.size() != s.rows()) throw DimensionError("infonce_loss: one positive per row");
  const std::size_t cols = s.cols();
  Tensor probs(s.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    if (positives[i] >= cols) throw DimensionError("infonce_loss: positive index out of range");
    auto row = probs.row(i);
    for (std::size_t j = 0; j < cols; ++j) row[j] = s(i, j) / tau;
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    const double pos = row[positives[i]];
    for (double& v : row) v = std::exp(v - lse);
    if (active.empty() || active[i]) total += lse - pos;
  }
  return Var::op(Tensor({1}, {total}), {similarities},
                 [probs = std::move(probs), positives, tau, active](const Tensor&, const Tensor& g, InputValues,
                                                                    GradSinks gs) {
                   if (!gs[0]) return;
                   for (std::size_t i = 0; i < probs.rows(); ++i) {
                     if (!active.empty() && !active[i]) continue;
                     for (std::size_t j = 0; j < probs.cols(); ++j) {
                       const double target = j == positives[i] ? 1.0 : 0.0;
                       (*gs[0])(i, j) += g[0] * (probs(i, j) - target) / tau;
                     }
                   }
                 });
}

struct LossBreakdown {
  double l_ind_T = 0.0;
  double l_ind_V = 0.0;
  double l_ground = 0.0;
  double total = 0.0;
};

/// Unweighted sum of the three objectives.
inline LossBreakdown total_loss(double l_ind_T, double l_ind_V, double l_ground) {
  return {l_ind_T, l_ind_V, l_ground, l_ind_T + l_ind_V + l_ground};
}

}  // namespace dign
