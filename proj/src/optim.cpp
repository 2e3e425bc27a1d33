#include "probekit/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "probekit/errors.hpp"

namespace probekit {

using nlohmann::json;

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("epochs: must be >= 1");
  if (cfg.warmup_epochs >= cfg.epochs) throw ConfigError("warmup_epochs: must be < epochs");
  if (!(cfg.peak_lr > 0.0) || !std::isfinite(cfg.peak_lr)) throw ConfigError("peak_lr: must be > 0");
  if (cfg.batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight_decay: must be >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) throw ConfigError("beta1: must lie in [0, 1)");
  if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) throw ConfigError("beta2: must lie in [0, 1)");
  if (!(cfg.eps > 0.0)) throw ConfigError("eps: must be > 0");
  if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0)) throw ConfigError("dropout_p: must lie in [0, 1)");
}

json to_json(const TrainConfig& cfg) {
  return json{{"epochs", cfg.epochs},       {"warmup_epochs", cfg.warmup_epochs},
              {"peak_lr", cfg.peak_lr},     {"batch_size", cfg.batch_size},
              {"weight_decay", cfg.weight_decay}, {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},         {"eps", cfg.eps},
              {"dropout_p", cfg.dropout_p}, {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.epochs = j.at("epochs").get<std::size_t>();
    c.warmup_epochs = j.at("warmup_epochs").get<std::size_t>();
    c.peak_lr = j.at("peak_lr").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  validate(c);
  return c;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs) {
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(cfg.epochs) + ")");
  }
  if (epoch < cfg.warmup_epochs) {
    return cfg.peak_lr * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  }
  const double progress = static_cast<double>(epoch - cfg.warmup_epochs) /
                          static_cast<double>(cfg.epochs - cfg.warmup_epochs);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimState init_optim(const ParamStore& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(ParamStore& params, const ParamStore& grads, OptimState& state, double lr,
                const TrainConfig& cfg) {
  if (!params.same_layout(grads) || !params.same_layout(state.m) || !params.same_layout(state.v)) {
    throw ShapeError("adamw_step: parameter, gradient and moment layouts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params.entries()[i].value.data();
    auto g = grads.entries()[i].value.data();
    auto m = state.m.entries()[i].value.data();
    auto v = state.v.entries()[i].value.data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      theta[k] -= lr * cfg.weight_decay * theta[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      theta[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace probekit
