#pragma once
/**
 * Policy-optimization objectives over sampled token batches.
 *
 * All objectives consume per-token ingredients assembled by the trainer:
 * the current-policy probability of the sampled token (and its full
 * distribution), the frozen behaviour probability recorded at sampling time,
 * the broadcast group advantage, the sampling-time entropy, and - for the
 * regularized variant - a frozen noise-filtered proxy snapshot.
 *
 * Variants:
 *   - grpo:               PPO-style min(r*A, clip(r, 1-eps, 1+eps)*A) with
 *                         per-trajectory length normalization;
 *   - grpo_entropy_bonus: grpo minus entropy_coefficient * mean entropy of
 *                         the current distributions;
 *   - clip_higher:        grpo with an asymmetric clip ceiling 1+epsilon_high;
 *   - top_entropy_8020:   grpo restricted to the top 20% of batch tokens by
 *                         sampling-time entropy (the rest contribute nothing);
 *   - lp_reg:             clip(r, 0, upper_clip)*A averaged over all tokens,
 *                         minus (as a loss: plus) beta * KL(proxy || current)
 *                         on gated tokens. A token is gated when its current
 *                         probability sits below the batch noise floor delta,
 *                         the proxy kept it (it is signal, not noise), and its
 *                         advantage is negative - i.e. exactly when a plain
 *                         surrogate would grind a plausibly-useful
 *                         low-probability token further down.
 *
 * Ablation switches on lp_reg: filter_enabled=false replaces the KL penalty
 * by hard exclusion of gated tokens from the surrogate; kl_direction flips
 * the penalty to KL(current || proxy); gate_basis=highest_entropy swaps the
 * low-probability eligibility for membership in the top-rho entropy set;
 * the threshold rule (min_p / fixed) feeds the proxy construction.
 *
 * Delta is computed once per rollout batch from behaviour-policy sampled-token
 * probabilities (nearest-rank rho percentile) and stays fixed across all
 * mini-batch updates of that rollout; the gate compares current-policy
 * probabilities against it.
 */

#include <optional>
#include <vector>

#include "lpreg/common.hpp"
#include "lpreg/distribution.hpp"
#include "lpreg/proxy.hpp"

namespace lpreg {

enum class Variant {
  grpo,
  grpo_entropy_bonus,
  clip_higher,
  top_entropy_8020,
  lp_reg,
};
enum class KlDirection { forward, reverse };
enum class GateBasis { lowest_probability, highest_entropy };

const char* variant_name(Variant v);
std::optional<Variant> parse_variant(const std::string& s);

struct ObjectiveConfig {
  Variant variant = Variant::lp_reg;
  double beta = 1.0;                  // KL penalty weight
  double rho = 0.01;                  // noise-floor percentile (0 disables)
  NoiseThresholdRule threshold{};     // proxy construction rule
  double upper_clip = 10.0;           // U in clip(r, 0, U)
  KlDirection kl_direction = KlDirection::forward;
  bool filter_enabled = true;         // false: hard-exclusion ablation
  GateBasis gate_basis = GateBasis::lowest_probability;
  double entropy_coefficient = 0.002;
  double ppo_epsilon = 0.2;
  double epsilon_high = 0.28;         // clip_higher ceiling
  double ref_kl_beta = 0.0;           // reference-policy KL weight (off)

  void validate() const;
};

/// Fraction of batch tokens kept by the top-entropy restriction.
constexpr double kTopEntropyFraction = 0.2;

/// One sampled token with everything a loss needs to score it. Pointers
/// reference storage owned by the trainer's prepared batch; proxy/ref may be
/// null when the variant does not use them.
struct TokenIngredient {
  double current_prob = 0.0;
  double behavior_prob = 0.0;
  double advantage = 0.0;
  double behavior_entropy = 0.0;
  const TokenDistribution* current_dist = nullptr;
  const ProxyDistribution* proxy = nullptr;
  const TokenDistribution* ref_dist = nullptr;
  int sampled = -1;
  int traj = 0;  // index into the batch's trajectory-length table
};

struct GateDecision {
  bool below_delta = false;        // basis condition (probability or entropy)
  bool proxy_positive = false;     // sampled token survived the noise filter
  bool negative_advantage = false;
  bool active() const { return below_delta && proxy_positive && negative_advantage; }
};

/// current / behaviour probability ratio; behaviour must be positive.
double importance_ratio(double current_prob, double behavior_prob);

/// Nearest-rank rho percentile of behaviour probabilities: the value at
/// sorted index ceil(rho*N)-1 (index 0 when rho*N < 1). rho == 0 returns 0,
/// disabling the gate.
double batch_delta(const std::vector<double>& behavior_probs, double rho);

/// Gate decision for one token under the probability basis.
GateDecision gate(double current_prob, double delta,
                  const ProxyDistribution& proxy, int sampled,
                  double advantage);

/// Loss contribution of a single token under lp_reg with the probability
/// gate: -clip(r, 0, U)*A plus beta*KL(proxy||current) (or the reverse
/// direction) when the gate is active.
double lp_reg_token_loss(const TokenIngredient& tok, double delta,
                         const ObjectiveConfig& cfg);

/// Per-token derivative of the batch loss w.r.t. this token's current
/// probability vector: d_prob applies to the sampled coordinate; d_dist, when
/// non-empty, is a dense gradient over the full vocabulary (KL penalties,
/// entropy bonus, reference KL). Normalization weights are already folded in.
struct TokenGrad {
  double d_prob = 0.0;
  std::vector<double> d_dist;
};

struct Diagnostics {
  double loss = 0.0;
  double surrogate_mean = 0.0;   // unweighted token mean of the surrogate loss
  double kl_mean_gated = 0.0;    // mean penalty KL over active gates (0 if none)
  double delta = 0.0;
  double reg_ratio = 0.0;        // gated_count / below_delta_count
  bool reg_ratio_defined = false;
  long gated_count = 0;
  long below_delta_count = 0;    // tokens meeting the basis condition
  double mean_entropy = 0.0;     // token mean of sampling-time entropy
  long token_count = 0;
};

struct BatchLossOutput {
  double loss = 0.0;
  Diagnostics diag;
  std::vector<GateDecision> gates;  // per token; meaningful for lp_reg
};

/// Scores a token batch under any variant. traj_lengths[t] is the token count
/// of trajectory t (used by per-trajectory normalization); every ingredient's
/// traj field must index into it and the lengths must sum to tokens.size().
/// When `grads` is non-null it is filled with one TokenGrad per token.
BatchLossOutput batch_loss(const std::vector<TokenIngredient>& tokens,
                           const std::vector<size_t>& traj_lengths,
                           double delta, const ObjectiveConfig& cfg,
                           std::vector<TokenGrad>* grads);

}  // namespace lpreg
