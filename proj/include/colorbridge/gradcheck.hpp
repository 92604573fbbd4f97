#pragma once

#include "colorbridge/abi.hpp"

#include <functional>
#include <vector>

#include "colorbridge/autograd.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI {

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +-step evaluations took a different branch of a
  // piecewise operation than the unperturbed one: the central difference
  // straddles a kink there and is not compared.
  std::size_t skipped_nonsmooth = 0;
  // Coordinates judged against the extrapolated difference (refine mode).
  std::size_t refined = 0;
};

/// With `refine`, a coordinate that misses `tolerance` at `step` is
/// re-examined with step/2. When the two differences show that the step-size
/// truncation error alone exceeds tolerance/2, the coordinate is compared
/// with the Richardson value (4 fd(step/2) - fd(step)) / 3 instead.
FiniteDiffReport finite_diff_report(const std::function<Variable()>& fn, std::vector<Variable> wrt,
                                    double step, bool refine = false, double tolerance = 1e-4);

/// Largest relative disagreement between reverse-mode gradients of a scalar
/// function and central differences:
///   max_i |analytic_i - fd_i| / max(1e-8, |fd_i|)
/// `fn` is re-evaluated with each coordinate of each variable in `wrt`
/// shifted by +-step. Throws NumericError on a non-finite evaluation.
/// Coordinates straddling a kink are skipped (see FiniteDiffReport).
double finite_diff_check(const std::function<Variable()>& fn, std::vector<Variable> wrt,
                         double step);

/// Single-input form: `fn` maps the input variable to a scalar.
double finite_diff_check(const std::function<Variable(const Variable&)>& fn, const Tensor& input,
                         double step);

}  // namespace colorbridge
