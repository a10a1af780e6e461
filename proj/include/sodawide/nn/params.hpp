#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sodawide/autodiff.hpp"

namespace sodawide::nn {

/// Named parameters and buffers of a network, in creation order. Buffers (batch
/// norm running statistics) are stored alongside but are not trainable.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string path;
    Var<T> var;
    bool trainable;
  };

  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  /// Kaiming-normal kernel: std = sqrt(2 / fan_in), fan_in = in_channels * kh * kw.
  Var<T> kaiming(const std::string& path, Shape shape) {
    const double fan_in = static_cast<double>(shape.c * shape.h * shape.w);
    return add(path, Tensor<T>::randn(shape, rng_, std::sqrt(2.0 / fan_in)), true);
  }

  Var<T> constant(const std::string& path, Shape shape, T value, bool trainable = true) {
    return add(path, Tensor<T>::full(shape, value), trainable);
  }

  Var<T> add(const std::string& path, Tensor<T> value, bool trainable) {
    if (index_.count(path)) throw std::logic_error("duplicate parameter path " + path);
    index_[path] = entries_.size();
    entries_.push_back(Entry{path, Var<T>(std::move(value), trainable), trainable});
    return entries_.back().var;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<Var<T>> trainable() const {
    std::vector<Var<T>> out;
    for (const auto& e : entries_)
      if (e.trainable) out.push_back(e.var);
    return out;
  }

  const Entry* find(const std::string& path) const {
    const auto it = index_.find(path);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  /// Element count of trainable parameters.
  std::size_t count() const {
    std::size_t total = 0;
    for (const auto& e : entries_)
      if (e.trainable) total += e.var.value().numel();
    return total;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

 private:
  std::mt19937_64 rng_;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Per-module parameter totals: every path prefix ending at a '.' boundary.
template <class T>
std::map<std::string, std::size_t> count_by_prefix(const ParamStore<T>& store, std::size_t depth) {
  std::map<std::string, std::size_t> out;
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    std::size_t pos = 0;
    for (std::size_t d = 0; d < depth; ++d) {
      pos = e.path.find('.', pos);
      if (pos == std::string::npos) break;
      out[e.path.substr(0, pos)] += e.var.value().numel();
      ++pos;
    }
  }
  return out;
}

}  // namespace sodawide::nn
