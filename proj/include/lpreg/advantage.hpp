#pragma once
/**
 * Group-relative advantages: each trajectory in a prompt group is scored
 * against its siblings as (reward - group_mean) / group_std, with the
 * population standard deviation (divide by G, no Bessel correction).
 *
 * A group whose rewards are all identical carries no learning signal; its
 * standard deviation is exactly zero and the group is flagged degenerate with
 * all advantages set to 0 rather than dividing by zero.
 */

#include <vector>

#include "lpreg/common.hpp"

namespace lpreg {

struct AdvantageSet {
  std::vector<double> values;  // one advantage per trajectory
  double mean = 0.0;
  double stddev = 0.0;  // population std of the rewards
  bool degenerate = false;
};

/// Standardizes one group of trajectory rewards. Rewards must be non-empty
/// and finite.
AdvantageSet group_advantages(const std::vector<double>& rewards);

/// Expands per-trajectory advantages to per-token streams: trajectory i's
/// advantage repeated lengths[i] times, concatenated in order.
std::vector<double> broadcast_advantage(const AdvantageSet& adv,
                                        const std::vector<size_t>& lengths);

}  // namespace lpreg
