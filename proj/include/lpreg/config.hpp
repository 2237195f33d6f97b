#pragma once
/**
 * Experiment configuration: one JSON document with five sections
 * {model, env, objective, schedule, telemetry}, each mapping onto the
 * corresponding module's config struct.
 *
 * Parsing is strict: unknown keys anywhere raise ConfigError with the full
 * field path, so typos fail loudly instead of silently running defaults.
 * Absent keys keep their defaults; the fully-resolved document (every field,
 * alphabetical keys) is echoed next to run outputs for provenance.
 *
 * Two hashes derive from the canonical echo:
 *   - config_hash:  over everything; identifies a run configuration;
 *   - resume_hash:  over everything except schedule.max_steps; stored in
 *     checkpoints so a run may be resumed with a longer horizon but never
 *     with a different model/env/objective/optimizer.
 */

#include <cstdint>
#include <string>

#include "json.hpp"
#include "lpreg/env.hpp"
#include "lpreg/objective.hpp"
#include "lpreg/policy.hpp"

namespace lpreg {

enum class Regime { on_policy, off_policy };

const char* regime_name(Regime r);

struct TrainSchedule {
  Regime regime = Regime::off_policy;
  int rollout_batch = 64;      // prompts sampled per step
  int group_size = 8;          // trajectories per prompt (G)
  int mini_batch = 8;          // prompts per gradient update (off-policy)
  double learning_rate = 0.1;
  long max_steps = 2000;
  int max_response_len = 32;
  long eval_every = 100;
  uint64_t seed = 1;
  std::string optimizer = "sgd";  // "sgd" | "momentum"
  double momentum = 0.9;          // used by the momentum optimizer only
  double grad_clip_norm = 0.0;    // global-norm cap; 0 disables

  /// 1 on-policy; rollout_batch / mini_batch off-policy.
  int updates_per_rollout() const;
  void validate() const;
};

struct TelemetryConfig {
  bool probe_enabled = true;
  long probe_every = 25;          // probe cadence in steps
  double probe_subsample = 0.02;  // record rate for non-designated tokens
  int density_window = 100;       // steps per density histogram window
  int bins = 50;                  // probability histogram bins on [0,1]

  void validate() const;
};

struct ExperimentConfig {
  PolicyConfig model;
  EnvConfig env;
  ObjectiveConfig objective;
  TrainSchedule schedule;
  TelemetryConfig telemetry;

  void validate() const;
};

/// Strict parse over defaults; unknown keys and type mismatches raise
/// ConfigError carrying the field path.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config_file(const std::string& path);

/// Fully-resolved canonical echo (every field present, alphabetical keys).
nlohmann::json config_to_json(const ExperimentConfig& cfg);

uint64_t config_hash(const ExperimentConfig& cfg);
uint64_t resume_hash(const ExperimentConfig& cfg);

/// Applies {"dotted.path": value} overrides onto a raw config document
/// (creating intermediate objects as needed); used by the ablation runner.
void apply_overrides(nlohmann::json& doc, const nlohmann::json& overrides);

}  // namespace lpreg
