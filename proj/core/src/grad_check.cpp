#include "confoundnet/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "confoundnet/error.hpp"

namespace confoundnet {

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

GradCheckResult grad_check(const std::function<Probe()>& objective, std::span<double> values,
                           std::span<const double> analytic, double eps) {
  if (values.size() != analytic.size()) {
    throw DimensionError("grad_check: " + std::to_string(values.size()) + " values but " +
                         std::to_string(analytic.size()) + " analytic gradients");
  }
  const std::uint64_t base_region = objective().region;
  GradCheckResult result;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const Probe plus = objective();
    values[i] = saved - eps;
    const Probe minus = objective();
    values[i] = saved;
    if (plus.region != base_region || minus.region != base_region) {
      ++result.skipped_nonsmooth;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * eps);
    const double err = relative_error(analytic[i], numeric);
    ++result.checked;
    if (err > result.max_rel_error || std::isnan(err)) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<double()>& objective, std::span<double> values,
                           std::span<const double> analytic, double eps) {
  return grad_check([&objective] { return Probe{objective(), 0}; }, values, analytic, eps);
}

}  // namespace confoundnet
