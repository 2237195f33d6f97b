#pragma once
/**
 * Gradient engine over the fixed policy recipe.
 *
 * Losses implement ScalarLoss: a scalar value as a function of policy
 * parameters plus an analytic reverse pass that accumulates dValue/dParams.
 * Frozen quantities (behaviour statistics, advantages, proxy snapshots, gate
 * thresholds, reference policies) are captured at loss construction and do not
 * vary with the parameters, so value() is exactly the function the reverse
 * pass differentiates.
 *
 * grad() runs the reverse pass into a parameter-shaped buffer and checks
 * finiteness. finite_difference_check() certifies any ScalarLoss against
 * central differences on a random coordinate subset; every shipped loss is
 * certified this way in the tests.
 */

#include <cstdint>

#include "lpreg/policy.hpp"

namespace lpreg {

class ScalarLoss {
 public:
  virtual ~ScalarLoss() = default;
  virtual double value(const PolicyParams& params) const = 0;
  /// Accumulates dValue/dParams into `grad` (same layout as params).
  virtual void add_gradient(const PolicyParams& params,
                            PolicyParams& grad) const = 0;
};

/// Evaluates the analytic gradient into a fresh zeroed buffer. Throws
/// NumericalError when any entry is non-finite.
PolicyParams grad(const ScalarLoss& loss, const PolicyParams& params);

struct FdReport {
  double max_rel_err = 0.0;  // worst relative error over probed coordinates
  size_t worst_index = 0;    // flat parameter index of the worst coordinate
  double fd = 0.0;           // central-difference estimate there
  double analytic = 0.0;     // reverse-pass value there
  size_t probed = 0;
};

/// Central finite differences on `n_coords` seeded random coordinates
/// (all coordinates when n_coords >= param count). Relative error uses
/// |fd - analytic| / max(|fd|, |analytic|, 1e-6) so exact-zero coordinates
/// compare cleanly.
FdReport finite_difference_check(const ScalarLoss& loss, PolicyParams params,
                                 double h, size_t n_coords, uint64_t seed);

}  // namespace lpreg
