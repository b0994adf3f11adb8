#include "bvap/param_store.hpp"

#include <algorithm>
#include <stdexcept>

namespace bvap {

Tensor ParamStore::add(std::string name, Tensor tensor) {
  if (index_.contains(name))
    throw std::invalid_argument("duplicate parameter name '" + name + "'");
  if (!tensor.requires_grad()) tensor = tensor.clone(true);
  const std::size_t n = tensor.numel();
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), tensor,
                           OptimizerSlots{std::vector<double>(n, 0.0),
                                          std::vector<double>(n, 0.0)}});
  return tensor;
}

bool ParamStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

const ParamStore::Entry& ParamStore::entry(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end())
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return entries_[it->second];
}

ParamStore::Entry& ParamStore::entry(std::string_view name) {
  return const_cast<Entry&>(std::as_const(*this).entry(name));
}

const Tensor& ParamStore::get(std::string_view name) const {
  return entry(name).tensor;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParamStore::append(ParamStore&& other) {
  for (auto& e : other.entries_) {
    if (index_.contains(e.name))
      throw std::invalid_argument("duplicate parameter name '" + e.name + "'");
    index_.emplace(e.name, entries_.size());
    entries_.push_back(std::move(e));
  }
  other.entries_.clear();
  other.index_.clear();
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.clear_grad();
}

std::size_t ParamStore::assign_from(const ParamStore& other) {
  std::size_t copied = 0;
  for (auto& e : entries_) {
    if (!other.contains(e.name)) continue;
    const Entry& src = other.entry(e.name);
    if (src.tensor.shape() != e.tensor.shape())
      throw std::invalid_argument("parameter '" + e.name + "' has shape " +
                                  e.tensor.shape().str() + " but source has " +
                                  src.tensor.shape().str());
    auto dst = e.tensor.mutable_values();
    std::copy(src.tensor.values().begin(), src.tensor.values().end(), dst.begin());
    e.slots = src.slots;
    ++copied;
  }
  return copied;
}

}  // namespace bvap
