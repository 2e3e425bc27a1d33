#include "probekit/bank.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "binary_io.hpp"
#include "probekit/errors.hpp"

namespace probekit {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(LayerKind kind) { return kind == LayerKind::conv ? "conv" : "sequence"; }

std::string to_string(TaskType task) {
  return task == TaskType::multi_label ? "multi_label" : "single_label";
}

LayerKind parse_layer_kind(const std::string& s) {
  if (s == "sequence") return LayerKind::sequence;
  if (s == "conv") return LayerKind::conv;
  throw ConfigError("unknown layer kind '" + s + "' (expected sequence|conv)");
}

TaskType parse_task_type(const std::string& s) {
  if (s == "single_label") return TaskType::single_label;
  if (s == "multi_label") return TaskType::multi_label;
  throw ConfigError("unknown task '" + s + "' (expected single_label|multi_label)");
}

std::size_t LayerSpec::time_dim() const {
  return kind == LayerKind::conv ? shape.at(2) : shape.at(0);
}

std::size_t LayerSpec::feature_dim() const {
  return kind == LayerKind::conv ? shape.at(0) * shape.at(1) : shape.at(1);
}

void validate_layer_spec(const LayerSpec& spec) {
  const std::size_t arity = spec.kind == LayerKind::conv ? 3 : 2;
  if (spec.shape.size() != arity) {
    throw ConfigError("layer '" + spec.name + "': " + to_string(spec.kind) + " layers need " +
                      std::to_string(arity) + " dims, got " + shape_to_string(spec.shape));
  }
  for (auto d : spec.shape) {
    if (d < 1) throw ConfigError("layer '" + spec.name + "': dimensions must be >= 1");
  }
}

void validate_manifest(const BankManifest& m) {
  if (m.version != 1) throw ConfigError("manifest version must be 1");
  if (m.num_samples < 1) throw ConfigError("num_samples must be >= 1");
  if (m.layers.empty()) throw ConfigError("manifest needs at least one layer");
  if (m.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (m.dtype != "f32le") throw ConfigError("dtype must be \"f32le\"");
  std::set<std::string> names;
  for (const auto& l : m.layers) {
    validate_layer_spec(l);
    if (!names.insert(l.name).second) throw ConfigError("duplicate layer name '" + l.name + "'");
  }
}

json to_json(const LayerSpec& spec) {
  return json{{"name", spec.name}, {"kind", to_string(spec.kind)}, {"shape", spec.shape}};
}

LayerSpec layer_spec_from_json(const json& j) {
  LayerSpec s;
  s.name = j.at("name").get<std::string>();
  s.kind = parse_layer_kind(j.at("kind").get<std::string>());
  s.shape = j.at("shape").get<Shape>();
  validate_layer_spec(s);
  return s;
}

json to_json(const BankManifest& m) {
  json layers = json::array();
  for (const auto& l : m.layers) layers.push_back(to_json(l));
  return json{{"version", m.version},         {"num_samples", m.num_samples},
              {"layers", layers},             {"task", to_string(m.task)},
              {"num_classes", m.num_classes}, {"dtype", m.dtype}};
}

BankManifest manifest_from_json(const json& j) {
  BankManifest m;
  try {
    m.version = j.at("version").get<int>();
    m.num_samples = j.at("num_samples").get<std::size_t>();
    for (const auto& l : j.at("layers")) m.layers.push_back(layer_spec_from_json(l));
    m.task = parse_task_type(j.at("task").get<std::string>());
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.dtype = j.at("dtype").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  validate_manifest(m);
  return m;
}

std::size_t LabelSet::num_samples() const {
  return task == TaskType::single_label ? class_index.size()
                                        : (num_classes ? multi_hot.size() / num_classes : 0);
}

Tensor LabelSet::targets(std::size_t i) const {
  Tensor t({num_classes});
  if (task == TaskType::single_label) {
    t[class_index.at(i)] = 1.0;
  } else {
    for (std::size_t c = 0; c < num_classes; ++c) t[c] = multi_hot.at(i * num_classes + c);
  }
  return t;
}

std::string layer_file_name(std::size_t layer) {
  return "layer_" + std::to_string(layer) + ".bin";
}

namespace {

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

std::uint64_t layer_bytes(const BankManifest& m, std::size_t l) {
  return static_cast<std::uint64_t>(m.num_samples) * m.layers[l].element_count() * 4;
}

std::uint64_t label_bytes(const BankManifest& m) {
  return m.task == TaskType::single_label ? static_cast<std::uint64_t>(m.num_samples) * 4
                                          : static_cast<std::uint64_t>(m.num_samples) * m.num_classes;
}

}  // namespace

void write_bank(const BankManifest& manifest, const std::vector<std::vector<Tensor>>& samples,
                const LabelSet& labels, const fs::path& dir) {
  validate_manifest(manifest);
  const std::size_t n = manifest.num_samples;
  if (samples.size() != n) {
    throw ShapeError("write_bank: " + std::to_string(samples.size()) + " samples, manifest says " +
                     std::to_string(n));
  }
  if (labels.task != manifest.task || labels.num_classes != manifest.num_classes ||
      labels.num_samples() != n) {
    throw ShapeError("write_bank: labels do not match manifest task/classes/samples");
  }
  if (manifest.task == TaskType::single_label) {
    for (auto c : labels.class_index) {
      if (c >= manifest.num_classes) throw ConfigError("write_bank: label out of range");
    }
  } else {
    for (auto b : labels.multi_hot) {
      if (b > 1) throw ConfigError("write_bank: multi-label targets must be 0 or 1");
    }
  }

  fs::create_directories(dir);
  for (std::size_t l = 0; l < manifest.layers.size(); ++l) {
    const LayerSpec& spec = manifest.layers[l];
    std::vector<unsigned char> bytes(layer_bytes(manifest, l));
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor& t = samples[i].at(l);
      if (t.shape() != spec.shape) {
        throw ShapeError("write_bank: sample " + std::to_string(i) + " layer '" + spec.name +
                         "' has shape " + shape_to_string(t.shape()) + ", expected " +
                         shape_to_string(spec.shape));
      }
      for (double v : t.data()) {
        const float f = static_cast<float>(v);
        if (!std::isfinite(f)) {
          throw NumericError("write_bank: non-finite value in sample " + std::to_string(i) +
                             " layer '" + spec.name + "'");
        }
        detail::put_f32_le(f, bytes.data() + pos);
        pos += 4;
      }
    }
    write_bytes(dir / layer_file_name(l), bytes);
  }

  std::vector<unsigned char> lbytes(label_bytes(manifest));
  if (manifest.task == TaskType::single_label) {
    for (std::size_t i = 0; i < n; ++i) detail::put_u32_le(labels.class_index[i], lbytes.data() + 4 * i);
  } else {
    std::copy(labels.multi_hot.begin(), labels.multi_hot.end(), lbytes.begin());
  }
  write_bytes(dir / kLabelsFile, lbytes);

  std::ofstream mf(dir / kManifestFile, std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write " + (dir / kManifestFile).string());
  mf << to_json(manifest).dump(2) << '\n';
}

namespace {

BankManifest load_manifest(const fs::path& dir) {
  const fs::path p = dir / kManifestFile;
  std::ifstream in(p);
  if (!in) throw BankError(p.string(), std::nullopt, "missing manifest");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw BankError(p.string(), std::nullopt, std::string("unparseable manifest: ") + e.what());
  }
  try {
    return manifest_from_json(j);
  } catch (const ConfigError& e) {
    throw BankError(p.string(), std::nullopt, e.what());
  }
}

}  // namespace

EmbeddingBank EmbeddingBank::open(const fs::path& dir) {
  EmbeddingBank bank;
  bank.dir_ = dir;
  bank.manifest_ = load_manifest(dir);
  const BankManifest& m = bank.manifest_;

  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const fs::path p = dir / layer_file_name(l);
    std::error_code ec;
    const auto size = fs::file_size(p, ec);
    if (ec) throw BankError(p.string(), std::nullopt, "missing layer file");
    if (size != layer_bytes(m, l)) {
      throw BankError(p.string(), std::nullopt,
                      "size mismatch: " + std::to_string(size) + " bytes, expected " +
                          std::to_string(layer_bytes(m, l)));
    }
  }

  const fs::path lp = dir / kLabelsFile;
  if (!fs::exists(lp)) throw BankError(lp.string(), std::nullopt, "missing labels file");
  const auto bytes = detail::read_file(lp);
  if (bytes.size() != label_bytes(m)) {
    throw BankError(lp.string(), std::nullopt,
                    "size mismatch: " + std::to_string(bytes.size()) + " bytes, expected " +
                        std::to_string(label_bytes(m)));
  }
  LabelSet& labels = bank.labels_;
  labels.task = m.task;
  labels.num_classes = m.num_classes;
  if (m.task == TaskType::single_label) {
    labels.class_index.resize(m.num_samples);
    for (std::size_t i = 0; i < m.num_samples; ++i) {
      const auto c = detail::get_u32_le(bytes.data() + 4 * i);
      if (c >= m.num_classes) {
        throw BankError(lp.string(), 4 * i,
                        "label " + std::to_string(c) + " out of range for " +
                            std::to_string(m.num_classes) + " classes");
      }
      labels.class_index[i] = c;
    }
  } else {
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      if (bytes[i] > 1) throw BankError(lp.string(), i, "multi-label byte is not 0 or 1");
    }
    labels.multi_hot.assign(bytes.begin(), bytes.end());
  }
  return bank;
}

Tensor EmbeddingBank::get(std::size_t sample, std::size_t layer) const {
  if (sample >= manifest_.num_samples || layer >= manifest_.layers.size()) {
    throw std::out_of_range("bank get(" + std::to_string(sample) + ", " + std::to_string(layer) +
                            ") out of range");
  }
  const LayerSpec& spec = manifest_.layers[layer];
  const std::size_t count = spec.element_count();
  const std::uint64_t offset = static_cast<std::uint64_t>(sample) * count * 4;
  const fs::path p = dir_ / layer_file_name(layer);
  std::vector<unsigned char> buf;
  if (!detail::read_at(p, offset, count * 4, buf)) {
    throw BankError(p.string(), offset, "short read");
  }
  std::vector<double> values(count);
  for (std::size_t k = 0; k < count; ++k) {
    const float f = detail::get_f32_le(buf.data() + 4 * k);
    if (!std::isfinite(f)) throw BankError(p.string(), offset + 4 * k, "non-finite value");
    values[k] = f;
  }
  return Tensor(spec.shape, std::move(values));
}

std::vector<std::vector<Tensor>> EmbeddingBank::load_all() const {
  const std::size_t n = manifest_.num_samples;
  std::vector<std::vector<Tensor>> out(n);
  for (auto& s : out) s.reserve(manifest_.layers.size());
  for (std::size_t l = 0; l < manifest_.layers.size(); ++l) {
    const LayerSpec& spec = manifest_.layers[l];
    const fs::path p = dir_ / layer_file_name(l);
    const auto bytes = detail::read_file(p);
    const std::size_t count = spec.element_count();
    if (bytes.size() != n * count * 4) throw BankError(p.string(), std::nullopt, "size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> values(count);
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t off = (i * count + k) * 4;
        const float f = detail::get_f32_le(bytes.data() + off);
        if (!std::isfinite(f)) throw BankError(p.string(), off, "non-finite value");
        values[k] = f;
      }
      out[i].emplace_back(spec.shape, std::move(values));
    }
  }
  return out;
}

std::vector<Violation> validate_bank(const fs::path& dir) {
  std::vector<Violation> report;
  BankManifest m;
  try {
    m = load_manifest(dir);
  } catch (const BankError& e) {
    report.push_back({e.file(), std::nullopt, e.what()});
    return report;
  }

  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const fs::path p = dir / layer_file_name(l);
    if (!fs::exists(p)) {
      report.push_back({p.string(), std::nullopt, "missing layer file"});
      continue;
    }
    const auto bytes = detail::read_file(p);
    if (bytes.size() != layer_bytes(m, l)) {
      report.push_back({p.string(), std::nullopt,
                        "size mismatch: " + std::to_string(bytes.size()) + " bytes, expected " +
                            std::to_string(layer_bytes(m, l))});
    }
    for (std::size_t off = 0; off + 4 <= bytes.size(); off += 4) {
      if (!std::isfinite(detail::get_f32_le(bytes.data() + off))) {
        report.push_back({p.string(), off, "non-finite value"});
      }
    }
  }

  const fs::path lp = dir / kLabelsFile;
  if (!fs::exists(lp)) {
    report.push_back({lp.string(), std::nullopt, "missing labels file"});
    return report;
  }
  const auto bytes = detail::read_file(lp);
  if (bytes.size() != label_bytes(m)) {
    report.push_back({lp.string(), std::nullopt,
                      "size mismatch: " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(label_bytes(m))});
  }
  if (m.task == TaskType::single_label) {
    for (std::size_t off = 0; off + 4 <= bytes.size(); off += 4) {
      const auto c = detail::get_u32_le(bytes.data() + off);
      if (c >= m.num_classes) {
        report.push_back({lp.string(), off, "label " + std::to_string(c) + " out of range"});
      }
    }
  } else {
    for (std::size_t off = 0; off < bytes.size(); ++off) {
      if (bytes[off] > 1) report.push_back({lp.string(), off, "multi-label byte is not 0 or 1"});
    }
  }
  return report;
}

}  // namespace probekit
