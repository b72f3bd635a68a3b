// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON persistence for grounding instances:
//
//   {"phrase_graph": {"features": [[...]], "edges": [[src, tgt, label], ...]},
//    "visual_graph": {...},
//    "proposals": [[x1, y1, x2, y2], ...],
//    "ground_truth": [[x1, y1, x2, y2], ...],
//    "true_alignment": [i, ...] | null}
//
// A dataset is one such object per line.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dign/errors.hpp"
#include "dign/graph.hpp"
#include "dign/tensor.hpp"

namespace dign {

using Json = nlohmann::json;

inline Json tensor_rows_to_json(const Tensor& t) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) rows.push_back(std::vector<double>(t.row(r).begin(), t.row(r).end()));
  return rows;
}

inline Json box_to_json(const BoundingBox& b) { return Json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Json graph_to_json(const SceneGraph& g) {
  Json edges = Json::array();
  for (const auto& e : g.edges) {
    edges.push_back(Json::array({e.src, e.tgt, e.label ? Json(*e.label) : Json(nullptr)}));
  }
  return {{"features", tensor_rows_to_json(g.features)}, {"edges", std::move(edges)}};
}

inline Json scene_to_json(const GroundingInstance& inst) {
  Json j;
  j["phrase_graph"] = graph_to_json(inst.phrase_graph);
  j["visual_graph"] = graph_to_json(inst.visual_graph);
  j["proposals"] = Json::array();
  for (const auto& b : inst.proposals) j["proposals"].push_back(box_to_json(b));
  j["ground_truth"] = Json::array();
  for (const auto& b : inst.ground_truth) j["ground_truth"].push_back(box_to_json(b));
  j["true_alignment"] = inst.true_alignment ? Json(*inst.true_alignment) : Json(nullptr);
  return j;
}

namespace detail {

inline const Json& field(const Json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw LoadError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw LoadError(path + "." + key + ": missing field");
  return *it;
}

inline double number(const Json& v, const std::string& path) {
  if (!v.is_number()) throw LoadError(path + ": expected a number");
  return v.get<double>();
}

inline std::size_t index(const Json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw LoadError(path + ": expected a non-negative integer");
  return v.get<std::size_t>();
}

inline Tensor rows_from_json(const Json& rows, const std::string& path) {
  if (!rows.is_array() || rows.empty()) throw LoadError(path + ": expected a non-empty array of rows");
  const std::size_t n = rows.size();
  if (!rows[0].is_array() || rows[0].empty()) throw LoadError(path + "[0]: expected a non-empty row");
  const std::size_t d = rows[0].size();
  Tensor t({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const std::string rp = path + "[" + std::to_string(r) + "]";
    if (!rows[r].is_array() || rows[r].size() != d) throw LoadError(rp + ": ragged row");
    for (std::size_t c = 0; c < d; ++c) t(r, c) = number(rows[r][c], rp);
  }
  if (!t.all_finite()) throw LoadError(path + ": non-finite value");
  return t;
}

inline BoundingBox box_from_json(const Json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 4) throw LoadError(path + ": expected [x1, y1, x2, y2]");
  BoundingBox b{number(v[0], path), number(v[1], path), number(v[2], path), number(v[3], path)};
  if (!b.valid()) throw LoadError(path + ": invalid box");
  return b;
}

inline std::vector<BoundingBox> boxes_from_json(const Json& v, const std::string& path) {
  if (!v.is_array()) throw LoadError(path + ": expected an array of boxes");
  std::vector<BoundingBox> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(box_from_json(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline SceneGraph graph_from_json(const Json& j, const std::string& path) {
  SceneGraph g;
  g.features = rows_from_json(field(j, "features", path), path + ".features");
  const Json& edges = field(j, "edges", path);
  if (!edges.is_array()) throw LoadError(path + ".edges: expected an array");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string ep = path + ".edges[" + std::to_string(i) + "]";
    const Json& e = edges[i];
    if (!e.is_array() || e.size() < 2 || e.size() > 3) throw LoadError(ep + ": expected [src, tgt, label]");
    Edge edge{index(e[0], ep), index(e[1], ep), std::nullopt};
    if (e.size() == 3 && !e[2].is_null()) {
      if (!e[2].is_number_integer()) throw LoadError(ep + ": label must be an integer or null");
      edge.label = e[2].get<int>();
    }
    g.edges.push_back(edge);
  }
  try {
    g.validate(path);
  } catch (const ContractError& err) {
    throw LoadError(err.what());
  }
  return g;
}

}  // namespace detail

inline GroundingInstance scene_from_json(const Json& j) {
  GroundingInstance inst;
  inst.phrase_graph = detail::graph_from_json(detail::field(j, "phrase_graph", "scene"), "phrase_graph");
  inst.visual_graph = detail::graph_from_json(detail::field(j, "visual_graph", "scene"), "visual_graph");
  inst.proposals = detail::boxes_from_json(detail::field(j, "proposals", "scene"), "proposals");
  inst.ground_truth = detail::boxes_from_json(detail::field(j, "ground_truth", "scene"), "ground_truth");
  if (auto it = j.find("true_alignment"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw LoadError("true_alignment: expected an array or null");
    std::vector<std::size_t> a;
    for (std::size_t i = 0; i < it->size(); ++i) a.push_back(detail::index((*it)[i], "true_alignment"));
    inst.true_alignment = std::move(a);
  }
  try {
    inst.validate();
  } catch (const ContractError& err) {
    throw LoadError(err.what());
  }
  return inst;
}

inline void save_scene(const std::filesystem::path& path, const GroundingInstance& inst) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << scene_to_json(inst).dump() << '\n';
}

inline Json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw LoadError(where + ": malformed JSON (" + e.what() + ")");
  }
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline GroundingInstance load_scene(const std::filesystem::path& path) {
  return scene_from_json(parse_json_text(read_text(path), path.string()));
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<GroundingInstance>& scenes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : scenes) out << scene_to_json(s).dump() << '\n';
}

inline std::vector<GroundingInstance> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string() + ": cannot open");
  std::vector<GroundingInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      out.push_back(scene_from_json(parse_json_text(line, where)));
    } catch (const LoadError& e) {
      throw LoadError(where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dign
