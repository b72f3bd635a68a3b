// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// SGD with momentum and weight decay, the training loop, evaluation at
// IoU >= 0.5 and checkpoints.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dign/autodiff.hpp"
#include "dign/config.hpp"
#include "dign/graph.hpp"
#include "dign/losses.hpp"
#include "dign/model.hpp"
#include "dign/rng.hpp"
#include "dign/scene_io.hpp"

namespace dign {

// ---------------------------------------------------------------------------
// Optimizer

/// g' = g + wd·p; buf = momentum·buf + g'; p = p - lr·buf.
inline void sgd_update(Tensor& p, const Tensor& g, Tensor& buf, double lr, double momentum, double weight_decay) {
  require_same_shape(p, g, "sgd_update");
  require_same_shape(p, buf, "sgd_update");
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i] + weight_decay * p[i];
    buf[i] = momentum * buf[i] + gi;
    p[i] -= lr * buf[i];
  }
}

struct SgdState {
  std::vector<Tensor> buffers;  // parallel to the parameter list
};

inline void sgd_step(std::vector<NamedParam>& params, SgdState& state, double lr, double momentum,
                     double weight_decay) {
  if (state.buffers.empty()) {
    for (const auto& p : params) state.buffers.push_back(Tensor::zeros(p.var.shape()));
  }
  if (state.buffers.size() != params.size()) throw DimensionError("optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor g = params[i].var.grad();
    sgd_update(params[i].var.mutable_value(), g, state.buffers[i], lr, momentum, weight_decay);
  }
}

// ---------------------------------------------------------------------------
// Training

struct StepMetrics {
  std::uint64_t step = 0;
  LossBreakdown loss;
  double acc = 0.0;
};

inline Json to_json(const StepMetrics& m) {
  return {{"step", m.step},
          {"l_ind_T", m.loss.l_ind_T},
          {"l_ind_V", m.loss.l_ind_V},
          {"l_ground", m.loss.l_ground},
          {"total", m.loss.total},
          {"acc", m.acc}};
}

struct TrainState {
  TrainConfig config;
  DignModel model;
  SgdState optimizer;
  std::uint64_t step = 0;
  std::vector<StepMetrics> log;
};

inline ForwardOptions training_forward_options(const TrainConfig& cfg) {
  ForwardOptions opt;
  opt.training = true;
  opt.tau = cfg.tau;
  opt.dgn_dropout = cfg.dropout;
  opt.fusion_dropout = cfg.fusion_dropout;
  return opt;
}

/// The intervention used by every instance of batch `step`, if any.
inline std::optional<InterventionPlan> batch_intervention_plan(const TrainConfig& cfg, std::uint64_t step) {
  if (cfg.interventions == InterventionMode::none) return std::nullopt;
  const double delta = cfg.interventions == InterventionMode::structure ? 0.0
                       : cfg.interventions == InterventionMode::feature ? 1.0
                                                                          : cfg.delta;
  Rng rng = derive_rng(cfg.seed, {0x91a4u, step});
  return draw_intervention_plan(delta, cfg.K, rng);
}

using EpochCallback = std::function<void(std::size_t epoch, const TrainState&)>;

/// Fully determined by (config, dataset). Instances with an unmatchable
/// phrase are skipped.
inline TrainState train(const TrainConfig& cfg, const std::vector<GroundingInstance>& data,
                        const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw ContractError("training set is empty");
  TrainState st;
  st.config = cfg;
  st.model = DignModel::init(
      cfg.model_config(data.front().phrase_graph.feature_dim(), data.front().visual_graph.feature_dim()), cfg.seed);
  auto params = st.model.named_parameters();

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = derive_rng(cfg.seed, {0x5f0fu, epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::uint64_t step = ++st.step;
      ForwardOptions opt = training_forward_options(cfg);
      opt.plan = batch_intervention_plan(cfg, step);

      std::vector<Var> totals;
      LossBreakdown sum;
      std::size_t hits = 0, phrases = 0;
      for (std::size_t b = start; b < end; ++b) {
        const auto& inst = data[order[b]];
        Rng drop_rng = derive_rng(cfg.seed, {0xd0u, step, order[b]});
        Rng intv_rng = derive_rng(cfg.seed, {0x1eu, step, order[b]});
        opt.dropout_rng = &drop_rng;
        opt.intervention_rng = &intv_rng;
        auto f = forward_instance(st.model, inst, opt);
        if (!f.matchable()) continue;
        const auto lb = f.breakdown();
        sum.l_ind_T += lb.l_ind_T;
        sum.l_ind_V += lb.l_ind_V;
        sum.l_ground += lb.l_ground;
        sum.total += lb.total;
        const auto pred = predict_from_scores(f.similarities.value());
        for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == f.positives[i].index;
        phrases += pred.size();
        totals.push_back(f.total);
      }
      if (totals.empty()) continue;
      const double inv = 1.0 / static_cast<double>(totals.size());
      Var loss = scale(add_n(totals), inv);
      if (!std::isfinite(loss.value().item())) {
        throw std::runtime_error("non-finite loss at step " + std::to_string(step) + " (epoch " +
                                 std::to_string(epoch) + ")");
      }
      for (auto& p : params) p.var.zero_grad();
      backward(loss);
      sgd_step(params, st.optimizer, cfg.lr, cfg.momentum, cfg.weight_decay);

      StepMetrics m;
      m.step = step;
      m.loss = total_loss(sum.l_ind_T * inv, sum.l_ind_V * inv, sum.l_ground * inv);
      m.acc = static_cast<double>(hits) / static_cast<double>(phrases);
      st.log.push_back(m);
    }
    if (on_epoch) on_epoch(epoch, st);
  }
  return st;
}

inline void write_metrics_log(const std::filesystem::path& path, const std::vector<StepMetrics>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& m : log) out << to_json(m).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::vector<bool>> per_instance;
  /// Instances with a phrase whose best proposal overlaps its ground truth by less than 0.5.
  std::size_t unmatchable = 0;
  LossBreakdown loss;  // mean over instances
};

inline Json to_json(const EvalReport& r) {
  Json per = Json::array();
  for (const auto& v : r.per_instance) per.push_back(v);
  return {{"accuracy", r.accuracy},
          {"correct", r.correct},
          {"total", r.total},
          {"unmatchable", r.unmatchable},
          {"loss",
           {{"l_ind_T", r.loss.l_ind_T}, {"l_ind_V", r.loss.l_ind_V}, {"l_ground", r.loss.l_ground},
            {"total", r.loss.total}}},
          {"per_instance", per}};
}

/// Deterministic: dropout and interventions off.
inline EvalReport evaluate(const DignModel& model, const std::vector<GroundingInstance>& data, double tau = 0.2) {
  EvalReport r;
  ForwardOptions opt;
  opt.tau = tau;
  for (const auto& inst : data) {
    const auto f = forward_instance(model, inst, opt);
    const auto pred = predict_from_scores(f.similarities.value());
    std::vector<bool> ok(pred.size());
    bool unmatchable = false;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      ok[i] = iou(inst.proposals[pred[i]], inst.ground_truth[i]) >= 0.5;
      r.correct += ok[i];
      unmatchable = unmatchable || f.positives[i].iou < 0.5;
    }
    r.total += pred.size();
    r.unmatchable += unmatchable;
    r.per_instance.push_back(std::move(ok));
    const auto lb = f.breakdown();
    r.loss.l_ind_T += lb.l_ind_T;
    r.loss.l_ind_V += lb.l_ind_V;
    r.loss.l_ground += lb.l_ground;
  }
  if (!data.empty()) {
    const double inv = 1.0 / static_cast<double>(data.size());
    r.loss = total_loss(r.loss.l_ind_T * inv, r.loss.l_ind_V * inv, r.loss.l_ground * inv);
  }
  r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints: config snapshot, every tensor as {"shape", "data"}, momentum
// buffers, step counter and the seed that derives every random stream.

namespace detail {

inline Json nest(const std::vector<double>& data, const Shape& shape, std::size_t axis, std::size_t& pos) {
  Json out = Json::array();
  for (std::size_t i = 0; i < shape[axis]; ++i) {
    if (axis + 1 == shape.size()) {
      out.push_back(data[pos++]);
    } else {
      out.push_back(nest(data, shape, axis + 1, pos));
    }
  }
  return out;
}

inline void flatten(const Json& j, const Shape& shape, std::size_t axis, std::vector<double>& out,
                    const std::string& path) {
  if (!j.is_array() || j.size() != shape[axis]) throw LoadError(path + ": data does not match shape");
  for (const auto& v : j) {
    if (axis + 1 == shape.size()) {
      if (!v.is_number()) throw LoadError(path + ": expected a number");
      out.push_back(v.get<double>());
    } else {
      flatten(v, shape, axis + 1, out, path);
    }
  }
}

}  // namespace detail

/// {"shape": [...], "data": nested arrays matching the shape}.
inline Json tensor_to_json(const Tensor& t) {
  std::size_t pos = 0;
  return {{"shape", t.shape()}, {"data", detail::nest(t.values(), t.shape(), 0, pos)}};
}

inline Tensor tensor_from_json(const Json& j, const std::string& path) {
  Shape shape;
  try {
    shape = j.at("shape").get<Shape>();
  } catch (const Json::exception&) {
    throw LoadError(path + ": missing or invalid shape");
  }
  if (shape.empty() || !j.contains("data")) throw LoadError(path + ": missing data");
  std::vector<double> data;
  detail::flatten(j.at("data"), shape, 0, data, path);
  try {
    return Tensor(std::move(shape), std::move(data));
  } catch (const DimensionError& e) {
    throw LoadError(path + ": " + e.what());
  }
}

inline Json checkpoint_to_json(const TrainState& st) {
  Json params = Json::object(), momentum = Json::object();
  const auto named = st.model.named_parameters();
  for (std::size_t i = 0; i < named.size(); ++i) {
    params[named[i].name] = tensor_to_json(named[i].var.value());
    if (i < st.optimizer.buffers.size()) momentum[named[i].name] = tensor_to_json(st.optimizer.buffers[i]);
  }
  const auto& mc = st.model.config;
  return {{"config", to_json(st.config)},
          {"model",
           {{"K", mc.K}, {"L", mc.L}, {"d_t", mc.d_t}, {"d_v", mc.d_v}, {"d_out", mc.d_out}, {"heads", mc.heads},
            {"fuse", mc.fuse}}},
          {"params", params},
          {"momentum", momentum},
          {"step", st.step},
          {"rng", {{"seed", st.config.seed}, {"step", st.step}}}};
}

inline TrainState checkpoint_from_json(const Json& j) {
  TrainState st;
  try {
    st.config = train_config_from_json(j.at("config"));
    const Json& m = j.at("model");
    ModelConfig mc{m.at("K").get<std::size_t>(),   m.at("L").get<std::size_t>(),
                   m.at("d_t").get<std::size_t>(), m.at("d_v").get<std::size_t>(),
                   m.at("d_out").get<std::size_t>(), m.at("heads").get<std::size_t>(),
                   m.at("fuse").get<bool>()};
    st.model = DignModel::init(mc, 0);
    st.step = j.at("step").get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw LoadError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint config: ") + e.what());
  }
  auto named = st.model.named_parameters();
  const Json& params = j.at("params");
  const Json* momentum = j.contains("momentum") ? &j.at("momentum") : nullptr;
  for (auto& p : named) {
    if (!params.contains(p.name)) throw LoadError("params." + p.name + ": missing tensor");
    Tensor t = tensor_from_json(params.at(p.name), "params." + p.name);
    if (t.shape() != p.var.shape()) throw LoadError("params." + p.name + ": shape mismatch");
    p.var.mutable_value() = std::move(t);
    if (momentum && momentum->contains(p.name)) {
      Tensor b = tensor_from_json(momentum->at(p.name), "momentum." + p.name);
      if (b.shape() != p.var.shape()) throw LoadError("momentum." + p.name + ": shape mismatch");
      st.optimizer.buffers.push_back(std::move(b));
    }
  }
  if (!st.optimizer.buffers.empty() && st.optimizer.buffers.size() != named.size()) {
    throw LoadError("momentum: incomplete buffer set");
  }
  return st;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& st) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << checkpoint_to_json(st).dump() << '\n';
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(parse_json_text(read_text(path), path.string()));
}

}  // namespace dign
