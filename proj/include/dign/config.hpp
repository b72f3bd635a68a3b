// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and its JSON form:
//
//   {"data":  {synthetic scene settings, "train_count", "test_count"},
//    "train": {model, optimizer and intervention settings, dataset paths}}
//
// Missing keys keep their defaults; unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include "json.hpp"

#include "dign/errors.hpp"
#include "dign/model.hpp"
#include "dign/scene_io.hpp"
#include "dign/synthetic.hpp"

namespace dign {

struct DataConfig {
  SyntheticConfig scene;
  std::size_t train_count = 500;
  std::size_t test_count = 100;
};

/// First scene index of the held-out split; keeps it disjoint from training.
inline constexpr std::uint64_t kTestIndexBase = 1ULL << 32;

struct TrainConfig {
  std::size_t K = 4;
  std::size_t L = 2;
  std::size_t d_out = 64;
  std::size_t head_count = 4;
  double tau = 0.2;
  double delta = 0.5;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 6;
  std::uint64_t seed = 0;
  double dropout = 0.5;
  double fusion_dropout = 0.1;
  double eps = 1e-12;
  InterventionMode interventions = InterventionMode::both;
  bool fuse = true;
  std::string train_path;
  std::string test_path;
  std::string metrics_path;

  void validate() const {
    if (K == 0 || d_out % K != 0) throw ConfigError("K must divide d_out");
    if (head_count == 0 || d_out % head_count != 0) throw ConfigError("head_count must divide d_out");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (delta < 0.0 || delta > 1.0) throw ConfigError("delta must lie in [0, 1]");
    if (lr < 0.0 || momentum < 0.0 || weight_decay < 0.0) throw ConfigError("optimizer rates must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (dropout < 0.0 || dropout >= 1.0 || fusion_dropout < 0.0 || fusion_dropout >= 1.0) {
      throw ConfigError("dropout rates must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  }

  ModelConfig model_config(std::size_t d_t, std::size_t d_v) const {
    return {K, L, d_t, d_v, d_out, head_count, fuse};
  }
};

struct ExperimentConfig {
  DataConfig data;
  TrainConfig train;
};

// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void read_opt(const Json& j, const char* key, T& out, std::set<std::string>& used) {
  used.insert(key);
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(std::string("field '") + key + "' has the wrong type");
  }
}

inline void reject_unknown(const Json& j, const std::set<std::string>& used, const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!used.count(it.key())) throw ConfigError("unknown field '" + section + "." + it.key() + "'");
}

}  // namespace detail

inline Json to_json(const DataConfig& d) {
  const auto& s = d.scene;
  return {{"n", s.n},
          {"m", s.m},
          {"d_t", s.d_t},
          {"d_v", s.d_v},
          {"motif_count", s.motif_count},
          {"class_count", s.class_count},
          {"noise_sigma", s.noise_sigma},
          {"bias_strength", s.bias_strength},
          {"motif_strength", s.motif_strength},
          {"nuisance_strength", s.nuisance_strength},
          {"seed", s.seed},
          {"train_count", d.train_count},
          {"test_count", d.test_count}};
}

inline DataConfig data_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("'data' must be an object");
  DataConfig d;
  auto& s = d.scene;
  std::set<std::string> used;
  detail::read_opt(j, "n", s.n, used);
  detail::read_opt(j, "m", s.m, used);
  detail::read_opt(j, "d_t", s.d_t, used);
  detail::read_opt(j, "d_v", s.d_v, used);
  detail::read_opt(j, "motif_count", s.motif_count, used);
  detail::read_opt(j, "class_count", s.class_count, used);
  detail::read_opt(j, "noise_sigma", s.noise_sigma, used);
  detail::read_opt(j, "bias_strength", s.bias_strength, used);
  detail::read_opt(j, "motif_strength", s.motif_strength, used);
  detail::read_opt(j, "nuisance_strength", s.nuisance_strength, used);
  detail::read_opt(j, "seed", s.seed, used);
  detail::read_opt(j, "train_count", d.train_count, used);
  detail::read_opt(j, "test_count", d.test_count, used);
  detail::reject_unknown(j, used, "data");
  s.validate();
  return d;
}

inline Json to_json(const TrainConfig& t) {
  return {{"K", t.K},
          {"L", t.L},
          {"d_out", t.d_out},
          {"head_count", t.head_count},
          {"tau", t.tau},
          {"delta", t.delta},
          {"lr", t.lr},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"seed", t.seed},
          {"dropout", t.dropout},
          {"fusion_dropout", t.fusion_dropout},
          {"eps", t.eps},
          {"interventions", to_string(t.interventions)},
          {"fuse", t.fuse},
          {"train_path", t.train_path},
          {"test_path", t.test_path},
          {"metrics_path", t.metrics_path}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("'train' must be an object");
  TrainConfig t;
  std::set<std::string> used;
  std::string mode = to_string(t.interventions);
  detail::read_opt(j, "K", t.K, used);
  detail::read_opt(j, "L", t.L, used);
  detail::read_opt(j, "d_out", t.d_out, used);
  detail::read_opt(j, "head_count", t.head_count, used);
  detail::read_opt(j, "tau", t.tau, used);
  detail::read_opt(j, "delta", t.delta, used);
  detail::read_opt(j, "lr", t.lr, used);
  detail::read_opt(j, "momentum", t.momentum, used);
  detail::read_opt(j, "weight_decay", t.weight_decay, used);
  detail::read_opt(j, "batch_size", t.batch_size, used);
  detail::read_opt(j, "epochs", t.epochs, used);
  detail::read_opt(j, "seed", t.seed, used);
  detail::read_opt(j, "dropout", t.dropout, used);
  detail::read_opt(j, "fusion_dropout", t.fusion_dropout, used);
  detail::read_opt(j, "eps", t.eps, used);
  detail::read_opt(j, "interventions", mode, used);
  detail::read_opt(j, "fuse", t.fuse, used);
  detail::read_opt(j, "train_path", t.train_path, used);
  detail::read_opt(j, "test_path", t.test_path, used);
  detail::read_opt(j, "metrics_path", t.metrics_path, used);
  detail::reject_unknown(j, used, "train");
  t.interventions = intervention_mode_from_string(mode);
  t.validate();
  return t;
}

inline Json to_json(const ExperimentConfig& c) { return {{"data", to_json(c.data)}, {"train", to_json(c.train)}}; }

inline ExperimentConfig experiment_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "data" && it.key() != "train") throw ConfigError("unknown section '" + it.key() + "'");
  if (j.contains("data")) c.data = data_config_from_json(j["data"]);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  try {
    return experiment_config_from_json(parse_json_text(read_text(path), path.string()));
  } catch (const LoadError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace dign
