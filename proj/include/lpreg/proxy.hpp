#pragma once
/**
 * Noise-filtered proxy distributions.
 *
 * A proxy is a snapshot of a policy distribution with its presumed-noise tail
 * removed: every token whose probability is at or below a threshold tau is
 * zeroed and the survivors are renormalized by the kept mass. Tokens exactly
 * at tau count as noise (survival requires prob > tau, strictly).
 *
 * Two threshold rules exist:
 *   - min_p: tau = value * max(probs), tracking distribution sharpness;
 *   - fixed: tau = value.
 *
 * The proxy separates "informative low-probability tokens" (kept, later
 * shielded by the gated KL penalty) from "noise" (dropped). Proxies are always
 * frozen snapshots: gradients never flow through them.
 */

#include <vector>

#include "lpreg/common.hpp"
#include "lpreg/distribution.hpp"

namespace lpreg {

struct NoiseThresholdRule {
  enum class Kind { min_p, fixed };
  Kind kind = Kind::min_p;
  double value = 0.02;
};

/// Threshold for one concrete distribution under a rule.
double resolve_threshold(const NoiseThresholdRule& rule,
                         const TokenDistribution& dist);

struct ProxyDistribution {
  std::vector<double> probs;  // dense over the vocabulary; zero off support
  std::vector<int> support;   // ascending ids with probs > 0
  double kept_mass = 0.0;     // pre-renormalization mass of the support
  double tau_used = 0.0;

  double prob(int id) const { return probs[static_cast<size_t>(id)]; }
  bool in_support(int id) const { return prob(id) > 0.0; }
};

/// Filters and renormalizes `dist` at threshold `tau`. Throws
/// DegenerateFilterError when nothing survives (tau at or above the max
/// probability) so configuration bugs surface instead of silently collapsing
/// to an argmax distribution.
ProxyDistribution build_proxy(const TokenDistribution& dist, double tau);

/// KL(proxy || dist) summed over the proxy support; terms with zero proxy
/// mass contribute exactly 0 and dist probabilities are floored at 1e-12
/// inside the log. Always >= 0; equals 0 iff the proxy equals dist on its
/// support and kept_mass == 1.
double forward_kl(const ProxyDistribution& proxy, const TokenDistribution& dist);

/// KL(dist || proxy) over the full vocabulary with the same log floor; large
/// (but finite) when dist keeps mass on tokens the proxy filtered out.
double reverse_kl(const TokenDistribution& dist, const ProxyDistribution& proxy);

}  // namespace lpreg
