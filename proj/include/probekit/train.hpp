#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "probekit/bank.hpp"
#include "probekit/objectives.hpp"
#include "probekit/optim.hpp"
#include "probekit/probe.hpp"
#include "probekit/rng.hpp"

namespace probekit {

// A bank fully loaded into memory.
struct Dataset {
  BankManifest manifest;
  std::vector<std::vector<Tensor>> samples;  // [sample][layer]
  LabelSet labels;

  static Dataset load(const EmbeddingBank& bank);
  std::size_t size() const noexcept { return samples.size(); }
};

// Throws ConfigError unless the model's layers and class count match the bank.
void require_compatible(const ProbeModel& model, const BankManifest& manifest);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct RunState {
  ProbeModel model;
  OptimState optim;
  std::size_t epoch = 0;  // epochs completed
  Rng rng;                // shuffling and dropout
  TrainConfig config;
  std::vector<EpochRecord> history;

  bool finished() const noexcept { return epoch >= config.epochs; }
  bool operator==(const RunState&) const = default;
};

// Seeding: the model is initialised from stream 0 of cfg.seed, the training
// loop draws from stream 1.
ProbeModel init_probe_for(const BankManifest& manifest, Strategy strategy, HeadKind head,
                          const TrainConfig& cfg);
RunState start_run(ProbeModel model, const TrainConfig& cfg);

// Per-sample loss against the bank's task type, with d(loss)/d(logits).
LossResult sample_loss(const Tensor& logits, const LabelSet& labels, std::size_t sample);

// Fisher-Yates permutation of 0..n-1 drawn from rng.
std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng);

// Runs epochs until the config's epoch count, or until `stop_after` epochs
// have completed in total, whichever is first.
void run_epochs(RunState& run, const Dataset& data,
                std::optional<std::size_t> stop_after = std::nullopt);

RunState train(const Dataset& data, ProbeModel model, const TrainConfig& cfg);
RunState train(const EmbeddingBank& bank, ProbeModel model, const TrainConfig& cfg);

nlohmann::json to_json(const RunState& run);
RunState run_state_from_json(const nlohmann::json& j);

void checkpoint(const RunState& run, const std::filesystem::path& file);
// Throws CheckpointError on unreadable, truncated or inconsistent files.
RunState restore(const std::filesystem::path& file);

}  // namespace probekit
