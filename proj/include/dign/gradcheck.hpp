// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dign/autodiff.hpp"

namespace dign {

struct NamedParam {
  std::string name;
  Var var;
};

struct TensorGradError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates skipped because a relu input sits at or crosses its kink.
  std::size_t excluded = 0;
  std::vector<TensorGradError> per_tensor;
};

namespace detail {

inline std::vector<double> record_relu_inputs(const std::function<Var()>& loss_fn, double& loss_value) {
  KinkRecorder rec;
  KinkRecorder* prev = active_kink_recorder();
  active_kink_recorder() = &rec;
  try {
    loss_value = loss_fn().value().item();
  } catch (...) {
    active_kink_recorder() = prev;
    throw;
  }
  active_kink_recorder() = prev;
  return std::move(rec.relu_inputs);
}

// A coordinate is unusable when a relu input flips sign under ±h, or sits
// within 10h of zero and moves at all.
inline bool near_kink(const std::vector<double>& base, const std::vector<double>& moved, double h) {
  if (base.size() != moved.size()) return true;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const bool flipped = (base[i] > 0.0) != (moved[i] > 0.0);
    const bool close = std::abs(base[i]) < 10.0 * h && moved[i] != base[i];
    if (flipped || close) return true;
  }
  return false;
}

}  // namespace detail

/// Compares the reverse-mode gradient of `loss_fn` against central differences
/// (f(p+h) - f(p-h)) / 2h, coordinate by coordinate. The relative error of a
/// coordinate is |analytic - numeric| / max(1, |numeric|). `loss_fn` must be
/// a deterministic function of the parameter values.
inline GradCheckReport finite_diff_check(const std::function<Var()>& loss_fn, std::vector<NamedParam> params,
                                         double h = 1e-5) {
  if (!(h > 0.0)) throw ContractError("finite_diff_check requires h > 0");
  for (auto& p : params) p.var.zero_grad();
  double base_loss = 0.0;
  {
    Var loss = loss_fn();
    base_loss = loss.value().item();
    backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.var.grad());

  const std::vector<double> base_kinks = detail::record_relu_inputs(loss_fn, base_loss);

  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    TensorGradError te{params[t].name};
    Tensor& value = params[t].var.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      double f_plus = 0.0, f_minus = 0.0;
      value[i] = orig + h;
      const auto kinks_plus = detail::record_relu_inputs(loss_fn, f_plus);
      value[i] = orig - h;
      const auto kinks_minus = detail::record_relu_inputs(loss_fn, f_minus);
      value[i] = orig;
      if (detail::near_kink(base_kinks, kinks_plus, h) || detail::near_kink(base_kinks, kinks_minus, h)) {
        ++te.excluded;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double err = std::abs(analytic[t][i] - numeric) / std::max(1.0, std::abs(numeric));
      te.max_rel_error = std::max(te.max_rel_error, err);
      ++te.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, te.max_rel_error);
    report.checked += te.checked;
    report.excluded += te.excluded;
    report.per_tensor.push_back(std::move(te));
  }
  return report;
}

}  // namespace dign
