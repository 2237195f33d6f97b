#pragma once
/**
 * Exploration-dynamics measurement: per-token probability probes, per-step
 * metric rows, probability-density histograms and the spark-vs-irrelevant
 * low-probability gap.
 *
 * Probes are read-only observations of a rollout: every sampled occurrence of
 * a designated token (spark/irrelevant classes) is recorded at probe steps,
 * other tokens are subsampled through an RNG stream separate from every
 * training stream - so enabling or disabling probes cannot change a single
 * training bit.
 *
 * All emitted artifacts are byte-stable: doubles are printed with shortest
 * round-trip formatting, rows are ordered by construction, and figures are
 * re-rendered from the files (not from memory), so a re-render from unchanged
 * inputs is byte-identical.
 */

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lpreg/common.hpp"
#include "lpreg/vocab.hpp"

namespace lpreg {

struct TokenProbeRecord {
  long step = 0;
  int token_id = 0;
  std::string token;            // vocabulary name, for readable logs
  double sampled_prob = 0.0;    // behaviour probability of the occurrence
  double position_entropy = 0.0;
  TokenClass cls = TokenClass::other;
  // Noise-filter diagnostics of the position, when the run built proxies:
  bool has_proxy = false;
  double tau_used = 0.0;
  double kept_mass = 0.0;
  int support_size = 0;
};

std::string probe_jsonl_line(const TokenProbeRecord& rec);
std::vector<TokenProbeRecord> read_probes(const std::string& path);

/// Seeded membership test for subsampling non-designated tokens; the stream
/// depends only on (seed, step, index) and never touches training RNG.
bool probe_selected(uint64_t seed, long step, uint64_t index, double rate);

// ============================================================================
// Metrics rows
// ============================================================================

inline constexpr const char* kMetricsHeader =
    "step,eval_accuracy,mean_entropy,loss,delta,reg_ratio,gated_count,"
    "spark_frequency,irrelevant_low_prob_rate";

struct MetricsRow {
  long step = 0;
  double eval_accuracy = 0.0;
  double mean_entropy = 0.0;
  double loss = 0.0;
  double delta = 0.0;
  double reg_ratio = 0.0;
  bool reg_ratio_defined = false;  // empty CSV field when false
  long gated_count = 0;
  double spark_frequency = 0.0;
  double irrelevant_low_prob_rate = 0.0;
};

std::string metrics_csv_line(const MetricsRow& row);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// ============================================================================
// Summaries
// ============================================================================

/// Normalized probability histogram of one step window.
struct DensityWindow {
  long first_step = 0;
  long last_step = 0;   // inclusive window bounds
  long count = 0;       // records aggregated
  std::vector<double> mass;  // per bin, sums to 1
};

/// Histograms over [0,1] for pre-filtered records (usually one class),
/// grouped into consecutive step windows of `window` steps. Empty input
/// yields an empty result.
std::vector<DensityWindow> density_summary(
    const std::vector<TokenProbeRecord>& records, int bins, int window);

struct GapRow {
  long step = 0;
  double spark_mean = 0.0;
  double irrelevant_mean = 0.0;
  double gap = 0.0;  // spark_mean - irrelevant_mean
};

/// Per-step mean sampled probability of spark vs. irrelevant records within
/// the low-probability window [low, high]; steps where either class is absent
/// are omitted.
std::vector<GapRow> class_mean_prob_gap(
    const std::vector<TokenProbeRecord>& records, double low = 0.0,
    double high = 0.1);

}  // namespace lpreg
