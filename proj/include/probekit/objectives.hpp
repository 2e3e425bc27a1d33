#pragma once

#include <cstddef>

#include "probekit/tensor.hpp"

namespace probekit {

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d(value)/d(logits)
};

// -log softmax(logits)[target], via max-subtracted log-sum-exp.
LossResult ce_loss(const Tensor& logits, std::size_t target);

// Mean over classes of max(z,0) - z*y + log(1 + exp(-|z|)); targets must be 0/1.
LossResult bce_loss(const Tensor& logits, const Tensor& targets);

}  // namespace probekit
