#include "lpreg/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lpreg {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::grpo:
      return "grpo";
    case Variant::grpo_entropy_bonus:
      return "grpo_entropy_bonus";
    case Variant::clip_higher:
      return "clip_higher";
    case Variant::top_entropy_8020:
      return "top_entropy_8020";
    case Variant::lp_reg:
      return "lp_reg";
  }
  return "?";
}

std::optional<Variant> parse_variant(const std::string& s) {
  for (Variant v : {Variant::grpo, Variant::grpo_entropy_bonus,
                    Variant::clip_higher, Variant::top_entropy_8020,
                    Variant::lp_reg}) {
    if (s == variant_name(v)) return v;
  }
  return std::nullopt;
}

void ObjectiveConfig::validate() const {
  if (!(beta >= 0.0)) throw ConfigError("objective.beta: must be >= 0");
  if (!(rho >= 0.0 && rho <= 1.0))
    throw ConfigError("objective.rho: must lie in [0, 1]");
  if (!(threshold.value >= 0.0))
    throw ConfigError("objective.threshold.value: must be >= 0");
  if (!(upper_clip > 1.0))
    throw ConfigError("objective.upper_clip: must be > 1");
  if (!(ppo_epsilon > 0.0 && ppo_epsilon < 1.0))
    throw ConfigError("objective.ppo_epsilon: must lie in (0, 1)");
  if (!(epsilon_high >= ppo_epsilon))
    throw ConfigError("objective.epsilon_high: must be >= ppo_epsilon");
  if (!(entropy_coefficient >= 0.0))
    throw ConfigError("objective.entropy_coefficient: must be >= 0");
  if (!(ref_kl_beta >= 0.0))
    throw ConfigError("objective.ref_kl_beta: must be >= 0");
}

double importance_ratio(double current_prob, double behavior_prob) {
  if (!(behavior_prob > 0.0))
    throw std::invalid_argument(
        "importance_ratio: behaviour probability must be positive");
  return current_prob / behavior_prob;
}

double batch_delta(const std::vector<double>& behavior_probs, double rho) {
  if (behavior_probs.empty())
    throw std::invalid_argument("batch_delta: empty probability batch");
  if (!(rho >= 0.0 && rho <= 1.0))
    throw std::invalid_argument("batch_delta: rho must lie in [0, 1]");
  if (rho == 0.0) return 0.0;  // gate disabled

  const size_t k = nearest_rank_count(rho, behavior_probs.size());
  std::vector<double> probs = behavior_probs;
  std::nth_element(probs.begin(), probs.begin() + (k - 1), probs.end());
  return probs[k - 1];
}

GateDecision gate(double current_prob, double delta,
                  const ProxyDistribution& proxy, int sampled,
                  double advantage) {
  GateDecision d;
  d.below_delta = current_prob < delta;
  d.proxy_positive = proxy.prob(sampled) > 0.0;
  d.negative_advantage = advantage < 0.0;
  return d;
}

// ============================================================================
// Shared term helpers (value + optional scaled gradient accumulation)
// ============================================================================

namespace {

double clip(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

void ensure_dense(std::vector<double>& v, size_t n) {
  if (v.empty()) v.assign(n, 0.0);
}

// KL(proxy || dist); adds scale * d/dp into grad_dist when non-null.
double forward_kl_term(const ProxyDistribution& proxy,
                       const TokenDistribution& dist, double scale,
                       std::vector<double>* grad_dist) {
  double kl = 0.0;
  if (grad_dist) ensure_dense(*grad_dist, dist.probs.size());
  for (int id : proxy.support) {
    const double q = proxy.probs[id];
    const double p = dist.probs[id];
    kl += q * (std::log(q) - log_clamped(p));
    if (grad_dist && p > kLogFloor) (*grad_dist)[id] += scale * (-q / p);
  }
  return kl;
}

// KL(dist || ref_probs) with the shared log floor; ref given as a dense
// probability vector. Adds scale * d/dp into grad_dist when non-null.
double reverse_kl_term(const TokenDistribution& dist,
                       const std::vector<double>& ref_probs, double scale,
                       std::vector<double>* grad_dist) {
  double kl = 0.0;
  if (grad_dist) ensure_dense(*grad_dist, dist.probs.size());
  for (size_t i = 0; i < dist.probs.size(); ++i) {
    const double p = dist.probs[i];
    const double log_ref = log_clamped(ref_probs[i]);
    if (p > 0.0) kl += p * (log_clamped(p) - log_ref);
    if (grad_dist) {
      const double d = p > kLogFloor ? std::log(p) + 1.0 - log_ref
                                     : std::log(kLogFloor) - log_ref;
      (*grad_dist)[i] += scale * d;
    }
  }
  return kl;
}

struct SurrogateTerm {
  double loss = 0.0;    // per-token surrogate loss (unweighted)
  double d_prob = 0.0;  // d loss / d current_prob (unweighted)
};

// lp_reg surrogate: -clip(r, 0, U) * A.
SurrogateTerm surrogate_clip_upper(double r, double advantage,
                                   double behavior_prob, double upper) {
  SurrogateTerm t;
  t.loss = -clip(r, 0.0, upper) * advantage;
  t.d_prob = r < upper ? -advantage / behavior_prob : 0.0;
  return t;
}

// PPO surrogate: -min(r*A, clip(r, 1-eps_lo, 1+eps_hi)*A).
SurrogateTerm surrogate_ppo_min(double r, double advantage,
                                double behavior_prob, double eps_lo,
                                double eps_hi) {
  const double lo = 1.0 - eps_lo, hi = 1.0 + eps_hi;
  const double v_r = r * advantage;
  const double v_c = clip(r, lo, hi) * advantage;
  SurrogateTerm t;
  if (v_r <= v_c) {  // unclipped branch (ties resolve here; same value anyway)
    t.loss = -v_r;
    t.d_prob = -advantage / behavior_prob;
  } else {
    t.loss = -v_c;
    t.d_prob = (r > lo && r < hi) ? -advantage / behavior_prob : 0.0;
  }
  return t;
}

// Indices of the top-k tokens by sampling-time entropy (ties: lower index).
std::vector<char> top_entropy_mask(const std::vector<TokenIngredient>& tokens,
                                   size_t k) {
  std::vector<size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (tokens[a].behavior_entropy != tokens[b].behavior_entropy)
      return tokens[a].behavior_entropy > tokens[b].behavior_entropy;
    return a < b;
  });
  std::vector<char> mask(tokens.size(), 0);
  for (size_t i = 0; i < k && i < order.size(); ++i) mask[order[i]] = 1;
  return mask;
}

}  // namespace

double lp_reg_token_loss(const TokenIngredient& tok, double delta,
                         const ObjectiveConfig& cfg) {
  if (!tok.proxy)
    throw std::invalid_argument("lp_reg_token_loss: missing proxy snapshot");
  const double r = importance_ratio(tok.current_prob, tok.behavior_prob);
  double loss =
      surrogate_clip_upper(r, tok.advantage, tok.behavior_prob, cfg.upper_clip)
          .loss;
  const GateDecision d =
      gate(tok.current_prob, delta, *tok.proxy, tok.sampled, tok.advantage);
  if (d.active() && cfg.beta != 0.0) {
    if (!tok.current_dist)
      throw std::invalid_argument("lp_reg_token_loss: missing current distribution");
    const double kl = cfg.kl_direction == KlDirection::forward
                          ? forward_kl(*tok.proxy, *tok.current_dist)
                          : reverse_kl(*tok.current_dist, *tok.proxy);
    loss += cfg.beta * kl;
  }
  return loss;
}

BatchLossOutput batch_loss(const std::vector<TokenIngredient>& tokens,
                           const std::vector<size_t>& traj_lengths,
                           double delta, const ObjectiveConfig& cfg,
                           std::vector<TokenGrad>* grads) {
  cfg.validate();
  if (tokens.empty())
    throw std::invalid_argument("batch_loss: empty ingredient stream");
  size_t total = 0;
  for (size_t l : traj_lengths) {
    if (l == 0)
      throw std::invalid_argument("batch_loss: zero-length trajectory");
    total += l;
  }
  if (total != tokens.size())
    throw std::invalid_argument(
        "batch_loss: trajectory lengths do not cover the token stream");

  const size_t n = tokens.size();
  const size_t n_traj = traj_lengths.size();
  const bool is_lp = cfg.variant == Variant::lp_reg;
  const double token_weight = 1.0 / static_cast<double>(n);

  if (grads) {
    grads->clear();
    grads->resize(n);
  }

  // Eligibility masks fixed per scored batch (sampling-time entropy, so the
  // sets do not move with the parameters being differentiated).
  std::vector<char> entropy_mask;
  if (cfg.variant == Variant::top_entropy_8020)
    entropy_mask = top_entropy_mask(tokens, nearest_rank_count(kTopEntropyFraction, n));
  if (is_lp && cfg.gate_basis == GateBasis::highest_entropy)
    entropy_mask = top_entropy_mask(tokens, nearest_rank_count(cfg.rho, n));

  BatchLossOutput out;
  out.diag.delta = delta;
  out.diag.token_count = static_cast<long>(n);
  if (is_lp) out.gates.resize(n);

  double loss_sum = 0.0;
  double surrogate_sum = 0.0;
  double entropy_sum = 0.0;
  double kl_gated_sum = 0.0;

  for (size_t i = 0; i < n; ++i) {
    const TokenIngredient& tok = tokens[i];
    if (tok.traj < 0 || static_cast<size_t>(tok.traj) >= n_traj)
      throw std::invalid_argument("batch_loss: trajectory index out of range");
    if (!std::isfinite(tok.advantage))
      throw NumericalError("batch_loss: non-finite advantage");
    const double r = importance_ratio(tok.current_prob, tok.behavior_prob);
    entropy_sum += tok.behavior_entropy;
    TokenGrad* tg = grads ? &(*grads)[i] : nullptr;

    if (is_lp) {
      // ------------------------------------------------------- lp_reg path
      GateDecision d;
      d.below_delta = cfg.gate_basis == GateBasis::lowest_probability
                          ? tok.current_prob < delta
                          : entropy_mask[i] != 0;
      d.negative_advantage = tok.advantage < 0.0;
      if (cfg.filter_enabled) {
        if (!tok.proxy)
          throw std::invalid_argument("batch_loss: lp_reg token missing proxy");
        d.proxy_positive = tok.proxy->prob(tok.sampled) > 0.0;
      } else {
        // no filter: the proxy condition is vacuous and active() marks the
        // tokens excluded from the surrogate
        d.proxy_positive = true;
      }
      out.gates[i] = d;
      if (d.below_delta) ++out.diag.below_delta_count;

      const SurrogateTerm s = surrogate_clip_upper(r, tok.advantage,
                                                   tok.behavior_prob,
                                                   cfg.upper_clip);
      if (!cfg.filter_enabled && d.active()) {
        // hard-exclusion ablation: gated tokens drop out of the gradient
        ++out.diag.gated_count;
        continue;
      }
      loss_sum += token_weight * s.loss;
      surrogate_sum += s.loss;
      if (tg) tg->d_prob += token_weight * s.d_prob;

      if (cfg.filter_enabled && d.active()) {
        ++out.diag.gated_count;
        if (cfg.beta != 0.0) {
          if (!tok.current_dist)
            throw std::invalid_argument(
                "batch_loss: lp_reg token missing current distribution");
          const double scale = token_weight * cfg.beta;
          double kl;
          if (cfg.kl_direction == KlDirection::forward) {
            kl = forward_kl_term(*tok.proxy, *tok.current_dist, scale,
                                 tg ? &tg->d_dist : nullptr);
          } else {
            kl = reverse_kl_term(*tok.current_dist, tok.proxy->probs, scale,
                                 tg ? &tg->d_dist : nullptr);
          }
          loss_sum += scale * kl;
          kl_gated_sum += kl;
        }
      }
    } else {
      // ------------------------------------------------- grpo-family path
      const double w =
          1.0 / (static_cast<double>(n_traj) *
                 static_cast<double>(traj_lengths[tok.traj]));
      const bool included =
          cfg.variant != Variant::top_entropy_8020 || entropy_mask[i] != 0;
      if (included) {
        const double eps_hi = cfg.variant == Variant::clip_higher
                                  ? cfg.epsilon_high
                                  : cfg.ppo_epsilon;
        const SurrogateTerm s = surrogate_ppo_min(r, tok.advantage,
                                                  tok.behavior_prob,
                                                  cfg.ppo_epsilon, eps_hi);
        loss_sum += w * s.loss;
        surrogate_sum += s.loss;
        if (tg) tg->d_prob += w * s.d_prob;

        if (cfg.ref_kl_beta != 0.0) {
          if (!tok.current_dist || !tok.ref_dist)
            throw std::invalid_argument(
                "batch_loss: reference KL requires current and reference "
                "distributions");
          const double scale = w * cfg.ref_kl_beta;
          loss_sum += scale * reverse_kl_term(*tok.current_dist,
                                              tok.ref_dist->probs, scale,
                                              tg ? &tg->d_dist : nullptr);
        }
      }
      if (cfg.variant == Variant::grpo_entropy_bonus) {
        if (!tok.current_dist)
          throw std::invalid_argument(
              "batch_loss: entropy bonus requires current distributions");
        loss_sum -= cfg.entropy_coefficient * token_weight *
                    tok.current_dist->entropy;
        if (tg && cfg.entropy_coefficient != 0.0) {
          ensure_dense(tg->d_dist, tok.current_dist->probs.size());
          const double scale = cfg.entropy_coefficient * token_weight;
          for (size_t k = 0; k < tg->d_dist.size(); ++k)
            tg->d_dist[k] +=
                scale * (log_clamped(tok.current_dist->probs[k]) + 1.0);
        }
      }
    }
  }

  if (!std::isfinite(loss_sum))
    throw NumericalError("batch_loss: non-finite loss");

  out.loss = loss_sum;
  out.diag.loss = loss_sum;
  out.diag.surrogate_mean = surrogate_sum / static_cast<double>(n);
  out.diag.mean_entropy = entropy_sum / static_cast<double>(n);
  if (out.diag.gated_count > 0)
    out.diag.kl_mean_gated = kl_gated_sum / out.diag.gated_count;
  if (is_lp && out.diag.below_delta_count > 0) {
    out.diag.reg_ratio = static_cast<double>(out.diag.gated_count) /
                         static_cast<double>(out.diag.below_delta_count);
    out.diag.reg_ratio_defined = true;
  }
  return out;
}

}  // namespace lpreg
