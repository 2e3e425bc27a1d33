#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "probekit/bank.hpp"

namespace probekit {

// Planted-signal bank description. Every activation is standard normal noise;
// samples of class c additionally get snr * mu_c added along the feature axis
// of `informative_layer`, only for time steps in [window_begin, window_end).
//
// Class prototypes mu_c (unit norm) come from stream 0 of `seed`; noise comes
// from stream 1 + `split`. Banks that share a seed but differ in split hold
// independent samples of the same task, which is how train/test pairs are made.
struct SynthSpec {
  std::vector<LayerSpec> layers;
  std::size_t num_samples = 0;
  std::size_t num_classes = 0;
  TaskType task = TaskType::single_label;
  std::size_t informative_layer = 0;
  std::size_t window_begin = 0;
  std::size_t window_end = 0;
  double snr = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t split = 0;
};

// Throws ConfigError whose message names the offending field.
void validate_synth_spec(const SynthSpec& spec);

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

// Unit-norm class prototypes, one row per class.
std::vector<Tensor> synth_prototypes(const SynthSpec& spec);

void synth_bank(const SynthSpec& spec, const std::filesystem::path& dir);

}  // namespace probekit
