#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bvap/tensor.hpp"

namespace bvap {

/// Per-parameter RMSProp accumulators.
struct OptimizerSlots {
  std::vector<double> square_avg;
  std::vector<double> momentum;
};

/// Ordered, uniquely named collection of trainable tensors together with
/// their optimizer state. Insertion order is the serialization order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    OptimizerSlots slots;
  };

  /// Registers a parameter (switched to requires_grad). Throws on duplicates.
  Tensor add(std::string name, Tensor tensor);

  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Entry& entry(std::string_view name);
  const Entry& entry(std::string_view name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  /// Moves every entry of `other` in; names must stay unique.
  void append(ParamStore&& other);

  void zero_grad();

  /// Overwrites values (and optimizer state) of entries present in both
  /// stores. Shapes must agree. Returns the number of entries copied.
  std::size_t assign_from(const ParamStore& other);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace bvap
