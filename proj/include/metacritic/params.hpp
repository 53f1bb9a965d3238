#pragma once

#include <map>
#include <string>
#include <vector>

#include "metacritic/tensor.hpp"

namespace metacritic {

/// Whether an entry is updated by the per-task inner loop or stays shared.
enum class Partition { Adapted, Shared };

/// Ordered, named collection of parameter tensors for one network.
/// Replacement is functional: `with` returns a new set, the original is
/// untouched, which is what lets per-task fast weights substitute cleanly.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    Partition partition = Partition::Adapted;
  };

  ParamSet() = default;

  void add(std::string name, Tensor tensor,
           Partition partition = Partition::Adapted) {
    if (index_.count(name)) {
      throw OpError("param set: duplicate name '" + name + "'");
    }
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(tensor), partition});
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  const std::vector<Entry>& entries() const { return entries_; }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    return entries_[index_of(name)].tensor;
  }

  Partition partition_of(const std::string& name) const {
    return entries_[index_of(name)].partition;
  }

  /// New set with one tensor substituted. Shape must be preserved.
  ParamSet with(const std::string& name, Tensor tensor) const {
    ParamSet out = *this;
    Entry& e = out.entries_[index_of(name)];
    if (e.tensor.shape() != tensor.shape()) {
      throw OpError("param set: replacement for '" + name + "' has shape " +
                    shape_str(tensor.shape()) + ", expected " +
                    shape_str(e.tensor.shape()));
    }
    e.tensor = std::move(tensor);
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.name);
    return out;
  }

  std::vector<std::string> names_in(Partition p) const {
    std::vector<std::string> out;
    for (const Entry& e : entries_)
      if (e.partition == p) out.push_back(e.name);
    return out;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.tensor);
    return out;
  }

  std::vector<Tensor> tensors_in(Partition p) const {
    std::vector<Tensor> out;
    for (const Entry& e : entries_)
      if (e.partition == p) out.push_back(e.tensor);
    return out;
  }

  std::size_t total_numel() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.tensor.numel();
    return n;
  }

 private:
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw OpError("param set: no entry named '" + name + "'");
    }
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace metacritic
