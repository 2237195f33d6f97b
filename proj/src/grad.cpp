#include "lpreg/grad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace lpreg {

PolicyParams grad(const ScalarLoss& loss, const PolicyParams& params) {
  PolicyParams g = PolicyParams::zeros(params.cfg);
  loss.add_gradient(params, g);
  for (const auto& b : g.blocks) {
    if (!all_finite(g.flat.data() + b.offset, b.size()))
      throw NumericalError("grad: non-finite gradient in parameter block '" +
                           b.name + "'");
  }
  return g;
}

FdReport finite_difference_check(const ScalarLoss& loss, PolicyParams params,
                                 double h, size_t n_coords, uint64_t seed) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_check: h <= 0");
  const PolicyParams analytic = grad(loss, params);
  const size_t n = params.param_count();

  std::vector<size_t> coords;
  if (n_coords >= n) {
    coords.resize(n);
    std::iota(coords.begin(), coords.end(), size_t{0});
  } else {
    Rng rng(derive_seed({stream_tag("fd-coords"), seed}));
    // sampled without replacement via partial Fisher-Yates over an index pool
    std::vector<size_t> pool(n);
    std::iota(pool.begin(), pool.end(), size_t{0});
    for (size_t i = 0; i < n_coords; ++i) {
      const size_t j = i + rng.below(n - i);
      std::swap(pool[i], pool[j]);
      coords.push_back(pool[i]);
    }
  }

  FdReport report;
  report.probed = coords.size();
  for (size_t idx : coords) {
    const double saved = params.flat[idx];
    params.flat[idx] = saved + h;
    const double up = loss.value(params);
    params.flat[idx] = saved - h;
    const double down = loss.value(params);
    params.flat[idx] = saved;

    const double fd = (up - down) / (2.0 * h);
    const double an = analytic.flat[idx];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    const double rel = std::abs(fd - an) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = idx;
      report.fd = fd;
      report.analytic = an;
    }
  }
  return report;
}

}  // namespace lpreg
