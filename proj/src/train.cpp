#include "probekit/train.hpp"

#include <fstream>
#include <sstream>
#include <utility>

#include "probekit/errors.hpp"

namespace probekit {

using nlohmann::json;

namespace {
constexpr const char* kCheckpointFormat = "probekit-checkpoint";
constexpr int kCheckpointVersion = 1;
}  // namespace

Dataset Dataset::load(const EmbeddingBank& bank) {
  return Dataset{bank.manifest(), bank.load_all(), bank.labels()};
}

void require_compatible(const ProbeModel& model, const BankManifest& manifest) {
  const ProbeArchitecture& a = model.arch;
  if (a.layers != manifest.layers) {
    throw ConfigError("bank layers do not match the layers the model was built for");
  }
  if (a.num_classes != manifest.num_classes) {
    throw ConfigError("bank has " + std::to_string(manifest.num_classes) +
                      " classes, model predicts " + std::to_string(a.num_classes));
  }
  if (model.task != manifest.task) {
    throw ConfigError("bank task " + to_string(manifest.task) + " differs from model task " +
                      to_string(model.task));
  }
}

ProbeModel init_probe_for(const BankManifest& manifest, Strategy strategy, HeadKind head,
                          const TrainConfig& cfg) {
  validate(cfg);
  Rng init = Rng::derive(cfg.seed, 0);
  return init_probe(manifest.layers, strategy, head, manifest.num_classes, init, cfg.dropout_p,
                    manifest.task);
}

RunState start_run(ProbeModel model, const TrainConfig& cfg) {
  validate(cfg);
  model.dropout_p = cfg.dropout_p;
  RunState run{std::move(model), {}, 0, Rng::derive(cfg.seed, 1), cfg, {}};
  run.optim = init_optim(run.model.params);
  return run;
}

LossResult sample_loss(const Tensor& logits, const LabelSet& labels, std::size_t sample) {
  if (labels.task == TaskType::single_label) return ce_loss(logits, labels.class_index.at(sample));
  return bce_loss(logits, labels.targets(sample));
}

std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

void run_epochs(RunState& run, const Dataset& data, std::optional<std::size_t> stop_after) {
  require_compatible(run.model, data.manifest);
  const std::size_t n = data.size();
  const std::size_t last = std::min(run.config.epochs, stop_after.value_or(run.config.epochs));
  ParamStore grads = run.model.params.zeros_like();

  while (run.epoch < last) {
    const double lr = lr_at(run.epoch, run.config);
    const std::vector<std::size_t> order = shuffled_order(n, run.rng);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += run.config.batch_size) {
      const std::size_t end = std::min(n, begin + run.config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - begin);
      grads.zero();
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t idx = order[k];
        const ProbeTrace trace = forward_trace(run.model, data.samples[idx], run.rng, true);
        const LossResult loss = sample_loss(trace.logits, data.labels, idx);
        loss_sum += loss.value;
        backward(run.model, trace, loss.grad, grads, scale);
      }
      adamw_step(run.model.params, grads, run.optim, lr, run.config);
    }
    run.history.push_back({run.epoch, lr, loss_sum / static_cast<double>(n)});
    ++run.epoch;
  }
}

RunState train(const Dataset& data, ProbeModel model, const TrainConfig& cfg) {
  RunState run = start_run(std::move(model), cfg);
  run_epochs(run, data);
  return run;
}

RunState train(const EmbeddingBank& bank, ProbeModel model, const TrainConfig& cfg) {
  return train(Dataset::load(bank), std::move(model), cfg);
}

namespace {

json store_to_json(const ParamStore& store) {
  json j = json::object();
  for (const auto& e : store.entries()) j[e.name] = tensor_to_json(e.value);
  return j;
}

ParamStore store_from_json(const json& j, const ParamStore& layout) {
  ParamStore out;
  for (const auto& e : layout.entries()) {
    if (!j.contains(e.name)) throw CheckpointError("optimizer state missing '" + e.name + "'");
    out.add(e.name, tensor_from_json(j.at(e.name), e.value.shape()));
  }
  if (j.size() != layout.size()) throw CheckpointError("optimizer state has extra entries");
  return out;
}

}  // namespace

json to_json(const RunState& run) {
  json history = json::array();
  for (const auto& r : run.history) {
    history.push_back({{"epoch", r.epoch}, {"lr", r.lr}, {"mean_loss", r.mean_loss}});
  }
  return json{{"format", kCheckpointFormat},
              {"version", kCheckpointVersion},
              {"model", to_json(run.model)},
              {"optimizer",
               {{"step", run.optim.step}, {"m", store_to_json(run.optim.m)},
                {"v", store_to_json(run.optim.v)}}},
              {"epoch", run.epoch},
              {"rng_state", run.rng.state()},
              {"rng_algorithm", Rng::kAlgorithmVersion},
              {"config", to_json(run.config)},
              {"history", history}};
}

RunState run_state_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat ||
        j.at("version").get<int>() != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint format");
    }
    if (j.at("rng_algorithm").get<std::uint32_t>() != Rng::kAlgorithmVersion) {
      throw CheckpointError("checkpoint written with a different rng algorithm");
    }
    RunState run;
    run.model = probe_from_json(j.at("model"));
    run.config = train_config_from_json(j.at("config"));
    const json& opt = j.at("optimizer");
    run.optim.step = opt.at("step").get<std::uint64_t>();
    run.optim.m = store_from_json(opt.at("m"), run.model.params);
    run.optim.v = store_from_json(opt.at("v"), run.model.params);
    run.epoch = j.at("epoch").get<std::size_t>();
    run.rng.set_state(j.at("rng_state").get<std::uint64_t>());
    for (const auto& r : j.at("history")) {
      run.history.push_back({r.at("epoch").get<std::size_t>(), r.at("lr").get<double>(),
                             r.at("mean_loss").get<double>()});
    }
    if (run.epoch > run.config.epochs || run.history.size() != run.epoch) {
      throw CheckpointError("epoch counter inconsistent with history");
    }
    return run;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  } catch (const NumericError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void checkpoint(const RunState& run, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + file.string());
  out << to_json(run).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + file.string());
}

RunState restore(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw CheckpointError("cannot open checkpoint " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint " + file.string() + ": " + e.what());
  }
  return run_state_from_json(j);
}

}  // namespace probekit
