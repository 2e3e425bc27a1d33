#pragma once

#include <cstddef>
#include <cstdint>

#include "json.hpp"
#include "probekit/params.hpp"

namespace probekit {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 5;
  double peak_lr = 1e-4;
  std::size_t batch_size = 32;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double dropout_p = 0.1;
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;
};

// Throws ConfigError naming the first invalid field.
void validate(const TrainConfig& cfg);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Linear warmup to peak_lr over warmup_epochs, then half-cosine decay.
// Constant within an epoch; epoch is 0-based.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct OptimState {
  ParamStore m;
  ParamStore v;
  std::uint64_t step = 0;

  bool operator==(const OptimState&) const = default;
};

OptimState init_optim(const ParamStore& params);

// Decoupled weight decay, then the bias-corrected Adam update. Increments step.
void adamw_step(ParamStore& params, const ParamStore& grads, OptimState& state, double lr,
                const TrainConfig& cfg);

}  // namespace probekit
