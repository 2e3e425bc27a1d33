#include "probekit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "probekit/errors.hpp"

namespace probekit {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

GradcheckResult gradcheck(const Objective& f, std::span<const double> point, double step) {
  std::vector<double> x(point.begin(), point.end());
  const ValueAndGradient base = f(x);
  if (!std::isfinite(base.value)) throw NumericError("gradcheck: non-finite value at point");
  if (base.gradient.size() != x.size()) {
    throw NumericError("gradcheck: gradient length " + std::to_string(base.gradient.size()) +
                       " != parameter count " + std::to_string(x.size()));
  }

  GradcheckResult result;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double plus = f(x).value;
    x[i] = orig - step;
    const double minus = f(x).value;
    x[i] = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("gradcheck: non-finite value perturbing index " + std::to_string(i));
    }
    const double numeric = (plus - minus) / (2.0 * step);
    if (!std::isfinite(base.gradient[i])) {
      throw NumericError("gradcheck: non-finite analytic gradient at index " + std::to_string(i));
    }
    const double err = relative_error(base.gradient[i], numeric);
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
    ++result.num_checked;
  }
  return result;
}

}  // namespace probekit
