// Command-line front end for the policy-optimization laboratory.
//
// Subcommands:
//   train        run an experiment config into an output directory
//   eval         score a checkpoint on an evaluation set
//   ablate       run a grid of config overrides, one run per grid entry
//   plot         (re)render figures from a run directory
//   export-eval  write the configured evaluation set as JSONL
//
// Every run is seed-deterministic: identical invocations produce identical
// artifacts byte for byte.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "lpreg/config.hpp"
#include "lpreg/env.hpp"
#include "lpreg/trainer.hpp"
#include "lpreg/vocab.hpp"

namespace {

using nlohmann::json;

json load_json_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw lpreg::IoError(std::string(what) + ": cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw lpreg::IoError(std::string(what) + ": " + path + ": " + e.what());
  }
}

int cmd_train(const std::string& config_path, const std::string& resume,
              const std::string& out_dir) {
  const lpreg::ExperimentConfig cfg = lpreg::load_config_file(config_path);
  const lpreg::RunResult result =
      lpreg::run_experiment(cfg, out_dir, resume);
  std::cout << "run complete: step " << result.final_step << ", eval accuracy "
            << lpreg::fmt_double(result.final_accuracy) << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& eval_set_path,
             const std::string& config_path) {
  lpreg::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = lpreg::load_config_file(config_path);

  const lpreg::Vocabulary& vocab = lpreg::Vocabulary::default_vocab_ref();
  lpreg::Environment env(cfg.env, &vocab);
  const auto eval_set = env.read_eval_set(eval_set_path);
  const lpreg::LoadedCheckpoint ckpt =
      lpreg::load_checkpoint(ckpt_path, cfg.model);

  const lpreg::EvalResult result = lpreg::evaluate(ckpt.params, env, eval_set);
  std::cout << "instances: " << eval_set.size() << "\n";
  std::cout << "accuracy: " << lpreg::fmt_double(result.accuracy) << "\n";
  for (const auto& [family, acc] : result.per_family)
    std::cout << "  " << family << ": " << lpreg::fmt_double(acc) << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& grid_path,
               const std::string& out_dir) {
  json base = load_json_file(config_path, "config");
  const json grid = load_json_file(grid_path, "grid");
  if (!grid.is_array())
    throw lpreg::ConfigError(
        "grid: expected an array of {name, overrides} entries");

  for (const json& entry : grid) {
    const std::string name = entry.at("name").get<std::string>();
    json doc = base;
    lpreg::apply_overrides(doc, entry.value("overrides", json::object()));
    const lpreg::ExperimentConfig cfg = lpreg::parse_config(doc);
    const std::string run_dir = out_dir + "/" + name;
    std::cout << "=== " << name << " -> " << run_dir << "\n";
    const lpreg::RunResult result = lpreg::run_experiment(cfg, run_dir);
    std::cout << "    step " << result.final_step << ", eval accuracy "
              << lpreg::fmt_double(result.final_accuracy) << "\n";
  }
  return 0;
}

int cmd_export_eval(const std::string& config_path, const std::string& out_path) {
  lpreg::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = lpreg::load_config_file(config_path);
  const lpreg::Vocabulary& vocab = lpreg::Vocabulary::default_vocab_ref();
  lpreg::Environment env(cfg.env, &vocab);
  const auto set = env.eval_set();
  env.write_eval_set(set, out_path);
  std::cout << "wrote " << set.size() << " instances to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale policy-optimization laboratory"};
  app.require_subcommand(1);

  std::string config_path, resume, out_dir, ckpt, eval_set, grid, figure, out_path;

  CLI::App* train = app.add_subcommand("train", "run an experiment");
  train->add_option("--config", config_path, "experiment config (JSON)")
      ->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--out", out_dir, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
  eval->add_option("--eval-set", eval_set, "evaluation set (JSONL)")
      ->required();
  eval->add_option("--config", config_path,
                   "config providing model/env settings (defaults if absent)");

  CLI::App* ablate = app.add_subcommand("ablate", "run a config-override grid");
  ablate->add_option("--config", config_path, "base config (JSON)")->required();
  ablate->add_option("--grid", grid, "grid file: [{name, overrides}] (JSON)")
      ->required();
  ablate->add_option("--out", out_dir, "parent output directory")->required();

  CLI::App* plot = app.add_subcommand("plot", "render figures from a run");
  plot->add_option("--run", out_dir, "run directory")->required();
  plot->add_option("--figure", figure, "density|scatter|curves|gap (default all)")
      ->default_val("all");

  CLI::App* export_eval =
      app.add_subcommand("export-eval", "write the evaluation set as JSONL");
  export_eval->add_option("--config", config_path, "experiment config (JSON)");
  export_eval->add_option("--out", out_path, "output JSONL path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, resume, out_dir);
    if (eval->parsed()) return cmd_eval(ckpt, eval_set, config_path);
    if (ablate->parsed()) return cmd_ablate(config_path, grid, out_dir);
    if (plot->parsed()) {
      lpreg::render_figures(out_dir, figure);
      std::cout << "figures rendered into " << out_dir << "\n";
      return 0;
    }
    if (export_eval->parsed()) return cmd_export_eval(config_path, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
