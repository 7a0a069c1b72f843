#ifndef MILNET_GRADCHECK_HPP_
#define MILNET_GRADCHECK_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "milnet/network.hpp"

namespace milnet {

// Finite-difference audit of backward_bag over randomized (architecture,
// pooling, bag) cases. Cases that sit too close to a ReLU kink or a max-pool
// tie are excluded (and counted) rather than tested, because central
// differences straddle the non-differentiability there. Per-entry relative
// errors are measured against a denominator floored at the roundoff noise of
// the difference quotient itself, so a disagreement smaller than what two
// double-precision score evaluations can resolve never counts as a mismatch.
struct GradCheckOptions {
  std::size_t trials = 100;  // cases per pooling kind
  std::vector<PoolKind> pools = {PoolKind::kMean, PoolKind::kMax, PoolKind::kSmoothMax};
  std::uint64_t seed = 0;
  double fd_step = 1e-6;      // central-difference half-step
  double tolerance = 1e-6;    // max allowed relative error per entry
  double kink_margin = 1e-4;  // exclusion distance from kinks and ties
  bool sabotage = false;      // corrupt one analytic entry per case (negative control)
};

struct GradCheckResult {
  std::size_t cases_run = 0;
  std::size_t kink_exclusions = 0;
  std::size_t tie_exclusions = 0;
  double max_rel_error = 0.0;
  std::size_t failures = 0;  // entries beyond tolerance
};

GradCheckResult run_gradcheck(const GradCheckOptions& options);

}  // namespace milnet

#endif  // MILNET_GRADCHECK_HPP_
