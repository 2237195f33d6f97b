#include "lpreg/advantage.hpp"

#include <cmath>
#include <stdexcept>

namespace lpreg {

AdvantageSet group_advantages(const std::vector<double>& rewards) {
  if (rewards.empty())
    throw std::invalid_argument("group_advantages: empty reward group");
  if (!all_finite(rewards.data(), rewards.size()))
    throw NumericalError("group_advantages: non-finite reward");

  const double n = static_cast<double>(rewards.size());
  AdvantageSet adv;
  adv.values.resize(rewards.size());

  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;

  adv.mean = mean;
  adv.stddev = std::sqrt(var);
  if (adv.stddev == 0.0) {
    adv.degenerate = true;  // identical rewards: no within-group signal
    return adv;
  }
  for (size_t i = 0; i < rewards.size(); ++i)
    adv.values[i] = (rewards[i] - mean) / adv.stddev;
  return adv;
}

std::vector<double> broadcast_advantage(const AdvantageSet& adv,
                                        const std::vector<size_t>& lengths) {
  if (lengths.size() != adv.values.size())
    throw std::invalid_argument(
        "broadcast_advantage: lengths/advantages size mismatch");
  std::vector<double> out;
  size_t total = 0;
  for (size_t l : lengths) total += l;
  out.reserve(total);
  for (size_t i = 0; i < lengths.size(); ++i)
    out.insert(out.end(), lengths[i], adv.values[i]);
  return out;
}

}  // namespace lpreg
