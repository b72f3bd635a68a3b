// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0
//
// dign command line: dataset generation, training, evaluation, gradient
// certification, ablations, K sweeps and attribution export.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dign/dign.hpp"

namespace fs = std::filesystem;
using namespace dign;

namespace {

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_experiment_config(path);
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::uint64_t> seed_list(std::size_t count) { return default_seeds(count); }

void print_progress(const std::string& name, std::uint64_t seed, double acc) {
  std::cerr << name << " seed " << seed << ": " << acc << '\n';
}

int cmd_gen(const std::string& config, const fs::path& out) {
  const auto cfg = config_or_default(config);
  fs::create_directories(out);
  SyntheticConfig held_out = cfg.data.scene;
  held_out.bias_strength = 0.0;
  save_dataset(out / "train.jsonl", generate_dataset(cfg.data.scene, cfg.data.train_count, 0));
  save_dataset(out / "test.jsonl", generate_dataset(held_out, cfg.data.test_count, kTestIndexBase));
  std::cout << "wrote " << cfg.data.train_count << " train and " << cfg.data.test_count << " test scenes to "
            << out.string() << '\n';
  return 0;
}

int cmd_train(const std::string& config, const fs::path& out) {
  const auto cfg = config_or_default(config);
  const auto data = load_or_generate(cfg);
  const TrainState st = train(cfg.train, data.train, [&](std::size_t epoch, const TrainState& s) {
    save_checkpoint(out, s);
    const auto& last = s.log.empty() ? StepMetrics{} : s.log.back();
    std::cerr << "epoch " << epoch + 1 << "/" << cfg.train.epochs << " step " << s.step << " loss "
              << last.loss.total << " acc " << last.acc << '\n';
  });
  save_checkpoint(out, st);
  if (!cfg.train.metrics_path.empty()) write_metrics_log(cfg.train.metrics_path, st.log);
  const auto report = evaluate(st.model, data.test, cfg.train.tau);
  std::cout << "test accuracy " << report.accuracy << " (" << report.correct << "/" << report.total << ")\n";
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, const std::string& out) {
  const TrainState st = load_checkpoint(ckpt);
  const fs::path file = fs::is_directory(data) ? data / "test.jsonl" : data;
  const auto report = evaluate(st.model, load_dataset(file), st.config.tau);
  if (!out.empty()) write_json(out, to_json(report));
  std::cout << "accuracy " << report.accuracy << " (" << report.correct << "/" << report.total << "), "
            << report.unmatchable << " unmatchable instances, loss " << report.loss.total << '\n';
  return 0;
}

int cmd_gradcheck(bool dropout) {
  GradcheckOptions opt;
  opt.dropout = dropout;
  const auto res = run_gradcheck(opt);
  if (res.skipped) {
    std::cout << res.message << '\n';
    return 0;
  }
  for (const auto& t : res.report.per_tensor)
    std::cout << t.name << "\t" << t.max_rel_error << "\t(" << t.checked << " checked, " << t.excluded
              << " excluded)\n";
  std::cout << res.message << '\n';
  return res.report.max_rel_error > 1e-4 ? 1 : 0;
}

int cmd_sweep(const SweepTable& table, const std::string& out) {
  if (!out.empty()) write_json(out, to_json(table));
  std::cout << to_text(table);
  return 0;
}

int cmd_explain(const fs::path& ckpt, const fs::path& scene, const fs::path& out) {
  const TrainState st = load_checkpoint(ckpt);
  write_json(out, explain(st.model, load_scene(scene)));
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled interventional graph network for phrase grounding"};
  app.require_subcommand(1);

  std::string config, out, ckpt, data, scene, variants = "full,k1,nofuse,cmt,struct,feat", ks = "1,2,4,8";
  std::size_t seeds = 5;
  bool dropout = false;

  auto* gen = app.add_subcommand("gen", "write a synthetic train/test split as JSON lines");
  gen->add_option("--config", config, "experiment config JSON");
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  tr->add_option("--config", config, "experiment config JSON");
  tr->add_option("--out", out, "checkpoint path")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint at IoU >= 0.5");
  ev->add_option("--ckpt", ckpt, "checkpoint path")->required();
  ev->add_option("--data", data, "dataset directory or JSON-lines file")->required();
  ev->add_option("--out", out, "optional report JSON");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every parameter on a tiny model");
  gc->add_flag("--dropout", dropout, "request dropout (the check is then skipped)");

  auto* ab = app.add_subcommand("ablate", "train and evaluate model variants over several seeds");
  ab->add_option("--config", config, "experiment config JSON");
  ab->add_option("--variants", variants, "comma-separated subset of full,k1,nofuse,cmt,struct,feat");
  ab->add_option("--seeds", seeds, "number of seeds");
  ab->add_option("--out", out, "optional table JSON");

  auto* ex = app.add_subcommand("explain", "export routing weights and per-edge dominant motifs");
  ex->add_option("--ckpt", ckpt, "checkpoint path")->required();
  ex->add_option("--scene", scene, "scene JSON")->required();
  ex->add_option("--out", out, "attribution JSON")->required();

  auto* ksw = app.add_subcommand("ksweep", "train and evaluate the full model for several K");
  ksw->add_option("--config", config, "experiment config JSON");
  ksw->add_option("--k", ks, "comma-separated K values");
  ksw->add_option("--seeds", seeds, "number of seeds");
  ksw->add_option("--out", out, "optional table JSON");

  CLI11_PARSE(app, argc, argv);

  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    for (std::string p; std::getline(ss, p, ',');)
      if (!p.empty()) parts.push_back(p);
    return parts;
  };

  try {
    if (*gen) return cmd_gen(config, out);
    if (*tr) return cmd_train(config, out);
    if (*ev) return cmd_eval(ckpt, data, out);
    if (*gc) return cmd_gradcheck(dropout);
    if (*ab) return cmd_sweep(ablate(config_or_default(config), split(variants), seed_list(seeds), print_progress), out);
    if (*ex) return cmd_explain(ckpt, scene, out);
    if (*ksw) {
      std::vector<std::size_t> kv;
      for (const auto& p : split(ks)) kv.push_back(std::stoul(p));
      return cmd_sweep(k_sweep(config_or_default(config), kv, seed_list(seeds), print_progress), out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
