#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probekit/tensor.hpp"

namespace probekit {

struct ParamEntry {
  std::string name;
  Tensor value;

  bool operator==(const ParamEntry&) const = default;
};

// Ordered collection of named tensors. Order is insertion order and is what
// flattening, serialization and the optimizer iterate over.
class ParamStore {
 public:
  Tensor& add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  std::vector<ParamEntry>& entries() noexcept { return entries_; }
  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t scalar_count() const;
  ParamStore zeros_like() const;
  void zero();

  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> values);

  // this += scale * other, entry by entry (same layout required).
  void add_scaled(const ParamStore& other, double scale);

  bool same_layout(const ParamStore& other) const;
  bool operator==(const ParamStore& other) const { return entries_ == other.entries_; }

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace probekit
