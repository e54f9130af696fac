#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

namespace confoundnet {

/// Objective value at the current parameters plus an identifier of the smooth
/// region it was evaluated in (ReLU masks, pool winners...). Kernels without
/// kinks report region 0.
struct Probe {
  double value = 0.0;
  std::uint64_t region = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  /// Coordinates where a +/- eps step crossed into a different region; the
  /// central difference is meaningless there so they are excluded.
  std::size_t skipped_nonsmooth = 0;
};

/// Relative error as used by the checker: |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares `analytic[i]` against the central difference of `objective` in
/// `values[i]` for every i. `values` is perturbed in place and restored.
GradCheckResult grad_check(const std::function<Probe()>& objective, std::span<double> values,
                           std::span<const double> analytic, double eps = 1e-5);

/// Convenience for smooth scalar objectives.
GradCheckResult grad_check(const std::function<double()>& objective, std::span<double> values,
                           std::span<const double> analytic, double eps = 1e-5);

}  // namespace confoundnet
