#include "lpreg/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lpreg {

TokenDistribution TokenDistribution::from_logits(
    const std::vector<double>& logits, double temperature) {
  if (logits.empty())
    throw std::invalid_argument("distribution: empty logits");
  if (!(temperature > 0.0))
    throw std::invalid_argument("distribution: temperature must be positive");
  if (!all_finite(logits.data(), logits.size()))
    throw NumericalError("distribution: non-finite logit");

  const size_t n = logits.size();
  TokenDistribution d;
  d.log_probs.resize(n);
  d.probs.resize(n);

  double mx = logits[0];
  for (size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (size_t i = 0; i < n; ++i) {
    d.log_probs[i] = (logits[i] - mx) / temperature;
    z += std::exp(d.log_probs[i]);
  }
  const double log_z = std::log(z);
  double h = 0.0;
  for (size_t i = 0; i < n; ++i) {
    d.log_probs[i] -= log_z;
    d.probs[i] = std::exp(d.log_probs[i]);
    if (d.probs[i] > 0.0) h -= d.probs[i] * d.log_probs[i];
  }
  d.entropy = h < 0.0 ? 0.0 : h;  // guard the -1e-17 rounding case
  return d;
}

TokenDistribution TokenDistribution::from_probs(std::vector<double> p) {
  if (p.empty()) throw std::invalid_argument("distribution: empty probs");
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0))
      throw std::invalid_argument("distribution: negative probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("distribution: probabilities must sum to 1");

  TokenDistribution d;
  d.probs = std::move(p);
  d.log_probs.resize(d.probs.size());
  double h = 0.0;
  for (size_t i = 0; i < d.probs.size(); ++i) {
    d.log_probs[i] = log_clamped(d.probs[i]);
    if (d.probs[i] > 0.0) h -= d.probs[i] * d.log_probs[i];
  }
  d.entropy = h < 0.0 ? 0.0 : h;
  return d;
}

int TokenDistribution::sample(Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  const int n = size();
  for (int i = 0; i < n; ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding left acc slightly under 1; fall back to the last nonzero entry.
  for (int i = n - 1; i >= 0; --i) {
    if (probs[i] > 0.0) return i;
  }
  return n - 1;
}

int TokenDistribution::argmax() const {
  int best = 0;
  for (int i = 1; i < size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

}  // namespace lpreg
