#include "probekit/params.hpp"

#include <stdexcept>

#include "probekit/errors.hpp"

namespace probekit {

Tensor& ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.back().value;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

Tensor& ParamStore::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + std::string(name) + "'");
  return entries_[it->second].value;
}

const Tensor& ParamStore::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + std::string(name) + "'");
  return entries_[it->second].value;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore z;
  for (const auto& e : entries_) z.add(e.name, Tensor::zeros_like(e.value));
  return z;
}

void ParamStore::zero() {
  for (auto& e : entries_) e.value.fill(0.0);
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const auto& e : entries_) flat.insert(flat.end(), e.value.data().begin(), e.value.data().end());
  return flat;
}

void ParamStore::assign_flat(std::span<const double> values) {
  if (values.size() != scalar_count()) {
    throw ShapeError("assign_flat: " + std::to_string(values.size()) + " values for " +
                     std::to_string(scalar_count()) + " parameters");
  }
  std::size_t pos = 0;
  for (auto& e : entries_) {
    for (auto& v : e.value.data()) v = values[pos++];
  }
}

void ParamStore::add_scaled(const ParamStore& other, double scale) {
  if (!same_layout(other)) throw ShapeError("add_scaled: parameter layouts differ");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto dst = entries_[i].value.data();
    auto src = other.entries_[i].value.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
  }
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].value.shape() != other.entries_[i].value.shape()) {
      return false;
    }
  }
  return true;
}

}  // namespace probekit
