#pragma once
/**
 * Rollout / update / evaluation orchestration.
 *
 * One training step is one rollout regardless of regime: sample G
 * trajectories for each of rollout_batch prompts under the current
 * ("behaviour") parameters, score them, normalize rewards within each group,
 * resolve the batch noise floor delta once, then apply one gradient update
 * (on_policy) or rollout_batch/mini_batch sequential mini-batch updates
 * (off_policy) against the frozen rollout.
 *
 * Frozen at rollout time and never recomputed: behaviour probabilities and
 * entropies, rewards, advantages, delta, and - for the regularized objective -
 * the noise-filtered proxy of every sampled position. Only current-policy
 * probabilities are re-evaluated inside updates; with one update per rollout
 * the current and behaviour parameters coincide, so every importance ratio is
 * exactly 1 and the off_policy regime at mini_batch == rollout_batch matches
 * the on_policy step bit for bit.
 *
 * Determinism: every random choice draws from a stream derived of
 * (label, run seed, step, prompt, member) counters, so runs are replayable
 * from any checkpoint and an interrupted-then-resumed run appends rows that
 * equal the uninterrupted run's byte for byte.
 *
 * Evaluation decodes greedily over the task family's admissible answer
 * tokens (answer-space-constrained argmax, ties to the lowest id), making an
 * untrained policy score answer-space chance level instead of near zero.
 */

#include <string>
#include <vector>

#include "lpreg/advantage.hpp"
#include "lpreg/config.hpp"
#include "lpreg/env.hpp"
#include "lpreg/grad.hpp"
#include "lpreg/objective.hpp"
#include "lpreg/policy.hpp"
#include "lpreg/telemetry.hpp"

namespace lpreg {

struct RolloutGroup {
  TaskInstance task;
  std::vector<Trajectory> trajectories;  // G members
  std::vector<double> rewards;           // binary, one per member
  AdvantageSet advantages;
};

struct TrainBatch {
  long step = 0;
  std::vector<RolloutGroup> groups;
  double delta = 0.0;                 // resolved once per rollout
  uint64_t behavior_fingerprint = 0;  // parameter fingerprint at sampling
  long token_count = 0;
  // Per-trajectory per-position noise-filtered proxies, indexed
  // [group * G + member][position]; built only when the objective gates
  // through the filter, empty otherwise.
  std::vector<std::vector<ProxyDistribution>> proxies;

  bool has_proxies() const { return !proxies.empty(); }
};

/// Samples a full batch under `params`. Trajectory sampling, task seeds and
/// proxies all derive from (cfg.schedule.seed, step) counters.
TrainBatch rollout(const PolicyParams& params, const Environment& env,
                   const ExperimentConfig& cfg, long step);

/// Loss over a contiguous group range of a frozen rollout, exposing the
/// ScalarLoss interface so the finite-difference certifier can probe the
/// exact objective the trainer optimizes. value()/add_gradient() re-run the
/// current-policy forward pass; everything else stays frozen.
class PreparedUpdate : public ScalarLoss {
 public:
  PreparedUpdate(const TrainBatch& batch, size_t group_begin, size_t group_end,
                 const ObjectiveConfig& objective,
                 const PolicyParams* ref_params);

  double value(const PolicyParams& params) const override;
  void add_gradient(const PolicyParams& params, PolicyParams& grad) const override;

  /// Diagnostics of the most recent value()/add_gradient() call.
  const Diagnostics& diagnostics() const { return diag_; }

 private:
  double score(const PolicyParams& params, PolicyParams* grad) const;

  const TrainBatch& batch_;
  size_t group_begin_, group_end_;
  ObjectiveConfig objective_;
  const PolicyParams* ref_params_;
  // reference distributions per token of the range, frozen at construction
  std::vector<TokenDistribution> ref_dists_;
  mutable Diagnostics diag_;
};

struct TrainerState {
  PolicyParams params;
  std::vector<double> momentum;  // velocity buffer (momentum optimizer)
  PolicyParams ref_params;       // frozen initial parameters
  bool has_ref = false;
  long step = 0;
};

TrainerState make_trainer_state(const ExperimentConfig& cfg);

struct StepDiagnostics {
  double loss = 0.0;            // mean over the step's updates
  double surrogate_mean = 0.0;
  double kl_mean_gated = 0.0;
  double delta = 0.0;
  double reg_ratio = 0.0;
  bool reg_ratio_defined = false;
  long gated_count = 0;
  long below_delta_count = 0;
  double mean_entropy = 0.0;    // behaviour entropy, batch-wide token mean
  double mean_reward = 0.0;
  double spark_frequency = 0.0;           // spark tokens / sampled tokens
  double irrelevant_low_prob_rate = 0.0;  // irrelevant tokens at prob <= 0.1
  int updates = 0;
};

/// Applies the step's update(s) to state.params. The batch must have been
/// sampled by exactly these parameters (fingerprint-checked). Non-finite
/// losses or gradients abort with the batch fingerprint in the message.
StepDiagnostics train_step(TrainerState& state, const TrainBatch& batch,
                           const ExperimentConfig& cfg);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::pair<std::string, double>> per_family;
};

EvalResult evaluate(const PolicyParams& params, const Environment& env,
                    const std::vector<TaskInstance>& eval_set);

// ============================================================================
// Checkpoints
// ============================================================================

/// One JSON header line (format tag, step, compatibility hash, parameter
/// shape) followed by raw little-endian float64 parameter data, then the
/// momentum buffer when present. No RNG state is stored - none exists.
void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const std::vector<double>* momentum, long step,
                     uint64_t compat_hash);

struct LoadedCheckpoint {
  PolicyParams params;
  std::vector<double> momentum;
  bool has_momentum = false;
  long step = 0;
  uint64_t compat_hash = 0;
};

/// Refuses (IoError) on format/shape mismatches against `model`.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const PolicyConfig& model);

// ============================================================================
// Experiment runner
// ============================================================================

struct RunResult {
  long final_step = 0;
  double final_accuracy = 0.0;
};

/// Executes the configured schedule into out_dir: config.echo.json,
/// metrics.csv (one row per step), objective.csv, probes.jsonl, checkpoints
/// at evaluation points, figures at the end. With a resume checkpoint the
/// run continues at step k+1 and appends to existing artifacts.
RunResult run_experiment(const ExperimentConfig& cfg,
                         const std::string& out_dir,
                         const std::string& resume_ckpt = "");

/// Collected probe records of one rollout (read-only; separate RNG stream).
std::vector<TokenProbeRecord> collect_probes(const TrainBatch& batch,
                                             const Vocabulary& vocab,
                                             const TelemetryConfig& tcfg,
                                             uint64_t seed);

/// Re-renders figures from a run directory's emitted files. `figure` is one
/// of density|scatter|curves|gap or "all".
void render_figures(const std::string& run_dir, const std::string& figure);

}  // namespace lpreg
