#include "probekit/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "probekit/errors.hpp"

namespace probekit {

LossResult ce_loss(const Tensor& logits, std::size_t target) {
  require_rank(logits, 1, "ce_loss");
  const std::size_t c = logits.size();
  if (target >= c) {
    throw ConfigError("ce_loss: target " + std::to_string(target) + " out of range for " +
                      std::to_string(c) + " classes");
  }
  const auto z = logits.data();
  const std::size_t top = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
  const double mx = z[top];
  // log-sum-exp - mx = log1p(sum of the non-maximal terms), exact for tiny tails.
  double tail = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    if (j != top) tail += std::exp(z[j] - mx);
  }
  const double lse_shift = std::log1p(tail);
  LossResult r{lse_shift - (z[target] - mx), Tensor({c})};
  const double denom = 1.0 + tail;
  for (std::size_t j = 0; j < c; ++j) r.grad[j] = std::exp(z[j] - mx) / denom;
  r.grad[target] -= 1.0;
  if (!std::isfinite(r.value)) throw NumericError("ce_loss: non-finite loss");
  return r;
}

LossResult bce_loss(const Tensor& logits, const Tensor& targets) {
  require_rank(logits, 1, "bce_loss");
  require_same_shape(logits, targets, "bce_loss");
  const std::size_t c = logits.size();
  LossResult r{0.0, Tensor({c})};
  for (std::size_t j = 0; j < c; ++j) {
    const double z = logits[j], y = targets[j];
    if (y != 0.0 && y != 1.0) throw ConfigError("bce_loss: targets must be 0 or 1");
    r.value += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    r.grad[j] = (sig - y) / static_cast<double>(c);
  }
  r.value /= static_cast<double>(c);
  if (!std::isfinite(r.value)) throw NumericError("bce_loss: non-finite loss");
  return r;
}

}  // namespace probekit
