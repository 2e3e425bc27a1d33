#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "probekit/bank.hpp"
#include "probekit/probe.hpp"
#include "probekit/tensor.hpp"

namespace probekit {

// Fraction of rows of logits [N x C] whose argmax equals the label. Ties go
// to the lowest class index.
double top1_accuracy(const Tensor& logits, std::span<const std::uint32_t> labels);

// Mean of precision@k over the ranks k of the positives, ranking by score
// descending with ties broken by lower sample index. Requires >= 1 positive.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives);

struct EvalReport {
  TaskType task = TaskType::single_label;
  std::string metric;  // "top1_acc" | "macro_map"
  double value = 0.0;
  std::vector<std::optional<double>> per_class_ap;  // multi_label; nullopt = excluded
  std::vector<std::size_t> excluded_classes;        // multi_label, zero positives
  std::size_t num_samples = 0;
  std::optional<std::vector<double>> layer_weights;  // strategy=all

  bool operator==(const EvalReport&) const = default;
};

// Macro mean AP over classes with at least one positive. scores and targets
// are [N x C]; targets hold 0/1. Throws ConfigError if no class has a positive.
EvalReport macro_map(const Tensor& scores, const Tensor& targets);

struct Dataset;
EvalReport evaluate(const Dataset& data, const ProbeModel& model);
EvalReport evaluate(const EmbeddingBank& bank, const ProbeModel& model);

nlohmann::json to_json(const EvalReport& report);

}  // namespace probekit
