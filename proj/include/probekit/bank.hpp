#pragma once

// On-disk embedding bank: per-layer activations of a frozen encoder plus labels.
//
// Directory layout:
//   manifest.json   BankManifest as JSON
//   layer_<i>.bin   little-endian f32, row-major, samples concatenated in order
//   labels.bin      single_label: N little-endian u32 class indices
//                   multi_label:  N*C bytes, each 0 or 1
// No headers, no padding.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "probekit/tensor.hpp"

namespace probekit {

enum class LayerKind { sequence, conv };
enum class TaskType { single_label, multi_label };

std::string to_string(LayerKind kind);
std::string to_string(TaskType task);
LayerKind parse_layer_kind(const std::string& s);
TaskType parse_task_type(const std::string& s);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::sequence;
  Shape shape;  // [time, feature] or [channel, height, width]

  // Dimensions after conv flattening: time is the width axis, features are
  // channel x height.
  std::size_t time_dim() const;
  std::size_t feature_dim() const;
  std::size_t element_count() const { return shape_size(shape); }

  bool operator==(const LayerSpec&) const = default;
};

// Throws ConfigError when arity, kind or dims are inconsistent.
void validate_layer_spec(const LayerSpec& spec);

struct BankManifest {
  int version = 1;
  std::size_t num_samples = 0;
  std::vector<LayerSpec> layers;
  TaskType task = TaskType::single_label;
  std::size_t num_classes = 0;
  std::string dtype = "f32le";

  bool operator==(const BankManifest&) const = default;
};

void validate_manifest(const BankManifest& m);

nlohmann::json to_json(const LayerSpec& spec);
LayerSpec layer_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BankManifest& m);
BankManifest manifest_from_json(const nlohmann::json& j);

struct LabelSet {
  TaskType task = TaskType::single_label;
  std::size_t num_classes = 0;
  std::vector<std::uint32_t> class_index;  // single_label, length N
  std::vector<std::uint8_t> multi_hot;     // multi_label, length N*C

  std::size_t num_samples() const;
  // Multi-hot targets of sample i as doubles (one-hot for single_label).
  Tensor targets(std::size_t i) const;
};

// samples[i][l] must have exactly manifest.layers[l].shape.
void write_bank(const BankManifest& manifest, const std::vector<std::vector<Tensor>>& samples,
                const LabelSet& labels, const std::filesystem::path& dir);

// Read-only view of a bank directory. Sizes and labels are checked on open;
// activations are read on demand. Concurrent get() calls are safe.
class EmbeddingBank {
 public:
  static EmbeddingBank open(const std::filesystem::path& dir);

  const BankManifest& manifest() const noexcept { return manifest_; }
  const LabelSet& labels() const noexcept { return labels_; }
  const std::filesystem::path& path() const noexcept { return dir_; }
  std::size_t num_samples() const noexcept { return manifest_.num_samples; }
  std::size_t num_layers() const noexcept { return manifest_.layers.size(); }

  // Activation of one sample at one layer, upcast to double, in its stored shape.
  Tensor get(std::size_t sample, std::size_t layer) const;
  // Every sample's layers, read with one sequential pass per layer file.
  std::vector<std::vector<Tensor>> load_all() const;

 private:
  EmbeddingBank() = default;
  std::filesystem::path dir_;
  BankManifest manifest_;
  LabelSet labels_;
};

inline EmbeddingBank read_bank(const std::filesystem::path& dir) {
  return EmbeddingBank::open(dir);
}

std::string layer_file_name(std::size_t layer);
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kLabelsFile = "labels.bin";

struct Violation {
  std::string file;
  std::optional<std::uint64_t> offset;
  std::string message;
};

// Every broken bank invariant, as data. Empty iff the bank is valid.
std::vector<Violation> validate_bank(const std::filesystem::path& dir);

}  // namespace probekit
