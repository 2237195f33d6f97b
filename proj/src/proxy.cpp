#include "lpreg/proxy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lpreg {

double resolve_threshold(const NoiseThresholdRule& rule,
                         const TokenDistribution& dist) {
  if (!(rule.value >= 0.0))
    throw std::invalid_argument("threshold rule: value must be >= 0");
  if (rule.kind == NoiseThresholdRule::Kind::fixed) return rule.value;
  double mx = 0.0;
  for (double p : dist.probs) mx = std::max(mx, p);
  return rule.value * mx;
}

ProxyDistribution build_proxy(const TokenDistribution& dist, double tau) {
  if (!(tau >= 0.0) || !std::isfinite(tau))
    throw std::invalid_argument("build_proxy: tau must be finite and >= 0");

  ProxyDistribution px;
  px.tau_used = tau;
  px.probs.assign(dist.probs.size(), 0.0);

  double kept = 0.0;
  for (int i = 0; i < dist.size(); ++i) {
    if (dist.probs[i] > tau) {
      px.support.push_back(i);
      kept += dist.probs[i];
    }
  }
  if (px.support.empty())
    throw DegenerateFilterError(
        "build_proxy: threshold tau=" + fmt_double(tau) +
        " filtered every token");

  px.kept_mass = kept;
  for (int id : px.support) px.probs[id] = dist.probs[id] / kept;
  return px;
}

double forward_kl(const ProxyDistribution& proxy,
                  const TokenDistribution& dist) {
  if (proxy.probs.size() != dist.probs.size())
    throw std::invalid_argument("forward_kl: size mismatch");
  double kl = 0.0;
  for (int id : proxy.support) {
    const double q = proxy.probs[id];
    kl += q * (std::log(q) - log_clamped(dist.probs[id]));
  }
  return kl;
}

double reverse_kl(const TokenDistribution& dist,
                  const ProxyDistribution& proxy) {
  if (proxy.probs.size() != dist.probs.size())
    throw std::invalid_argument("reverse_kl: size mismatch");
  double kl = 0.0;
  for (int i = 0; i < dist.size(); ++i) {
    const double p = dist.probs[i];
    if (p > 0.0) kl += p * (log_clamped(p) - log_clamped(proxy.probs[i]));
  }
  return kl;
}

}  // namespace lpreg
