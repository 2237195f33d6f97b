#pragma once
/**
 * Categorical next-token distributions.
 *
 * Distributions are built from logits in the log domain (max-subtracted
 * softmax) so probabilities, log-probabilities and entropy always come from
 * one consistent vector: sum(probs) == 1 within 1e-9, exp(log_probs) == probs
 * within 1e-9 and entropy lies in [0, ln V].
 *
 * Sampling is inverse-CDF in token-index order; the recorded probability of a
 * sampled token is precisely probs[token] (same arithmetic path), which later
 * lets importance ratios evaluate to exactly 1.0 on freshly sampled data.
 */

#include <vector>

#include "lpreg/common.hpp"

namespace lpreg {

struct TokenDistribution {
  std::vector<double> probs;
  std::vector<double> log_probs;
  double entropy = 0.0;

  int size() const { return static_cast<int>(probs.size()); }

  /// Softmax of logits / temperature. temperature must be positive; logits
  /// must be non-empty and finite.
  static TokenDistribution from_logits(const std::vector<double>& logits,
                                       double temperature);

  /// Wraps an explicit probability vector (must sum to 1 within 1e-9).
  /// Zero entries get log_probs at the log floor; they contribute zero
  /// entropy by the 0 * log 0 = 0 convention.
  static TokenDistribution from_probs(std::vector<double> p);

  /// Inverse-CDF sample; returns a token id.
  int sample(Rng& rng) const;

  /// Highest-probability token; ties resolve to the lowest index.
  int argmax() const;
};

}  // namespace lpreg
