#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace probekit {

struct ValueAndGradient {
  double value = 0.0;
  std::vector<double> gradient;
};

// Scalar objective over a flat parameter vector, returning its analytic gradient.
using Objective = std::function<ValueAndGradient(std::span<const double>)>;

inline constexpr double kGradcheckStep = 1e-5;

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t num_checked = 0;
};

// |a - n| / max(1, |a|, |n|)
double relative_error(double analytic, double numeric);

// Compares the analytic gradient of f at `point` with central differences.
// Throws NumericError if f is non-finite anywhere it is evaluated.
GradcheckResult gradcheck(const Objective& f, std::span<const double> point,
                          double step = kGradcheckStep);

}  // namespace probekit
