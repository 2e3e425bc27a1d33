#include "probekit/synth.hpp"

#include <cmath>

#include "probekit/errors.hpp"
#include "probekit/rng.hpp"

namespace probekit {

using nlohmann::json;

void validate_synth_spec(const SynthSpec& spec) {
  if (spec.layers.empty()) throw ConfigError("layers: at least one layer is required");
  for (const auto& l : spec.layers) validate_layer_spec(l);
  if (spec.num_samples < 1) throw ConfigError("num_samples: must be >= 1");
  if (spec.num_classes < 2) throw ConfigError("num_classes: must be >= 2");
  if (spec.informative_layer >= spec.layers.size()) {
    throw ConfigError("informative_layer: " + std::to_string(spec.informative_layer) +
                      " is out of range for " + std::to_string(spec.layers.size()) + " layers");
  }
  const std::size_t t = spec.layers[spec.informative_layer].time_dim();
  if (spec.window_begin >= spec.window_end || spec.window_end > t) {
    throw ConfigError("time_window: [" + std::to_string(spec.window_begin) + ", " +
                      std::to_string(spec.window_end) + ") must be non-empty and within [0, " +
                      std::to_string(t) + ")");
  }
  if (!(spec.snr >= 0.0) || !std::isfinite(spec.snr)) {
    throw ConfigError("snr: must be finite and non-negative");
  }
  // Manifest-level checks (unique names, etc.).
  BankManifest m{1, spec.num_samples, spec.layers, spec.task, spec.num_classes, "f32le"};
  validate_manifest(m);
}

json to_json(const SynthSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) layers.push_back(to_json(l));
  return json{{"layers", layers},
              {"num_samples", spec.num_samples},
              {"num_classes", spec.num_classes},
              {"task", to_string(spec.task)},
              {"informative_layer", spec.informative_layer},
              {"time_window", {spec.window_begin, spec.window_end}},
              {"snr", spec.snr},
              {"seed", spec.seed},
              {"split", spec.split}};
}

namespace {

template <typename T>
T field(const json& j, const char* name) {
  if (!j.contains(name)) throw ConfigError(std::string(name) + ": missing");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  }
}

}  // namespace

SynthSpec synth_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("synth spec must be a JSON object");
  SynthSpec s;
  const json layers = field<json>(j, "layers");
  if (!layers.is_array()) throw ConfigError("layers: must be an array");
  for (const auto& l : layers) {
    try {
      s.layers.push_back(layer_spec_from_json(l));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("layers: ") + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("layers: ") + e.what());
    }
  }
  // Negative integers would wrap on get<size_t>; reject them explicitly.
  for (const char* name : {"num_samples", "num_classes", "informative_layer", "seed"}) {
    if (j.contains(name) && !j.at(name).is_number_unsigned()) {
      throw ConfigError(std::string(name) + ": must be a non-negative integer");
    }
  }
  s.num_samples = field<std::size_t>(j, "num_samples");
  s.num_classes = field<std::size_t>(j, "num_classes");
  s.task = parse_task_type(field<std::string>(j, "task"));
  s.informative_layer = field<std::size_t>(j, "informative_layer");
  const auto window = field<std::vector<std::size_t>>(j, "time_window");
  if (window.size() != 2) throw ConfigError("time_window: expected [begin, end)");
  s.window_begin = window[0];
  s.window_end = window[1];
  s.snr = field<double>(j, "snr");
  s.seed = field<std::uint64_t>(j, "seed");
  if (j.contains("split")) s.split = field<std::uint64_t>(j, "split");
  validate_synth_spec(s);
  return s;
}

std::vector<Tensor> synth_prototypes(const SynthSpec& spec) {
  const std::size_t f = spec.layers.at(spec.informative_layer).feature_dim();
  Rng rng = Rng::derive(spec.seed, 0);
  std::vector<Tensor> protos;
  protos.reserve(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    Tensor mu({f});
    double norm2 = 0.0;
    for (std::size_t k = 0; k < f; ++k) {
      mu[k] = rng.normal();
      norm2 += mu[k] * mu[k];
    }
    mu *= 1.0 / std::sqrt(norm2);
    protos.push_back(std::move(mu));
  }
  return protos;
}

void synth_bank(const SynthSpec& spec, const std::filesystem::path& dir) {
  validate_synth_spec(spec);
  const auto protos = synth_prototypes(spec);
  Rng noise = Rng::derive(spec.seed, 1 + spec.split);

  BankManifest manifest{1, spec.num_samples, spec.layers, spec.task, spec.num_classes, "f32le"};
  LabelSet labels;
  labels.task = spec.task;
  labels.num_classes = spec.num_classes;

  std::vector<std::vector<Tensor>> samples(spec.num_samples);
  for (std::size_t i = 0; i < spec.num_samples; ++i) {
    const std::size_t cls = i % spec.num_classes;
    if (spec.task == TaskType::single_label) {
      labels.class_index.push_back(static_cast<std::uint32_t>(cls));
    } else {
      for (std::size_t c = 0; c < spec.num_classes; ++c) labels.multi_hot.push_back(c == cls ? 1 : 0);
    }

    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
      const LayerSpec& ls = spec.layers[l];
      Tensor t(ls.shape);
      for (auto& v : t.data()) v = noise.normal();
      if (l == spec.informative_layer && spec.snr > 0.0) {
        const Tensor& mu = protos[cls];
        for (std::size_t time = spec.window_begin; time < spec.window_end; ++time) {
          if (ls.kind == LayerKind::sequence) {
            for (std::size_t f = 0; f < ls.shape[1]; ++f) t(time, f) += spec.snr * mu[f];
          } else {
            const std::size_t height = ls.shape[1], width = ls.shape[2];
            for (std::size_t ch = 0; ch < ls.shape[0]; ++ch) {
              for (std::size_t h = 0; h < height; ++h) {
                t[(ch * height + h) * width + time] += spec.snr * mu[ch * height + h];
              }
            }
          }
        }
      }
      samples[i].push_back(std::move(t));
    }
  }
  write_bank(manifest, samples, labels, dir);
}

}  // namespace probekit
