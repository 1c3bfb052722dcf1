#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmdt/autograd.hpp"

namespace mmdt {

/// Name -> tensor map; the unit of checkpoint serialization.
template <typename S>
using NamedTensors = std::map<std::string, Tensor<S>>;

using Rng = std::mt19937_64;

/// Owns the parameters and buffers of one network under unique names.
template <typename S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<S> var;
    bool buffer = false;
  };

  Var<S> add_param(const std::string& name, Tensor<S> init) { return add(name, std::move(init), false); }
  /// Non-differentiable state (normalization statistics).
  Var<S> add_buffer(const std::string& name, Tensor<S> init) { return add(name, std::move(init), true); }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Var<S> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("no parameter named '" + name + "'");
    return entries_[it->second].var;
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }

  /// Parameters (not buffers) whose gradients are currently enabled.
  std::vector<Var<S>> trainable() const {
    std::vector<Var<S>> out;
    for (const auto& e : entries_)
      if (!e.buffer && e.var.requires_grad()) out.push_back(e.var);
    return out;
  }
  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
      if (!e.buffer && e.var.requires_grad()) out.push_back(e.name);
    return out;
  }

  /// Enables gradients exactly for parameters matching `pred`.
  void set_trainable(const std::function<bool(const std::string&)>& pred) {
    for (auto& e : entries_)
      if (!e.buffer) e.var.set_requires_grad(pred(e.name));
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& e : entries_)
      if (!e.buffer) n += e.var.value().size();
    return n;
  }

  NamedTensors<S> state() const {
    NamedTensors<S> out;
    for (const auto& e : entries_) out.emplace(e.name, e.var.value());
    return out;
  }

  /// Copies values in place, so existing Var handles stay bound. Every name must match.
  void load_state(const NamedTensors<S>& state, const std::string& prefix = "") {
    std::size_t used = 0;
    for (auto& e : entries_) {
      auto it = state.find(prefix + e.name);
      if (it == state.end()) throw StateError("missing tensor '" + prefix + e.name + "'");
      require_shape(it->second.shape(), e.var.value().shape(), e.name.c_str());
      e.var.mutable_value() = it->second;
      ++used;
    }
    if (prefix.empty() && used != state.size())
      throw StateError("state has " + std::to_string(state.size() - used) + " unknown tensors");
  }

  /// Overwrites only the named tensors; every name must exist.
  void assign(const NamedTensors<S>& subset) {
    for (const auto& [name, value] : subset) {
      auto v = get(name);
      require_shape(value.shape(), v.value().shape(), name.c_str());
      v.mutable_value() = value;
    }
  }

 private:
  Var<S> add(const std::string& name, Tensor<S> init, bool buffer) {
    if (index_.count(name)) throw StateError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({name, Var<S>(std::move(init), !buffer), buffer});
    return entries_.back().var;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename S>
void merge_prefixed(NamedTensors<S>& into, const NamedTensors<S>& from, const std::string& prefix) {
  for (const auto& [k, v] : from) into.emplace(prefix + k, v);
}

template <typename S>
NamedTensors<S> strip_prefix(const NamedTensors<S>& from, const std::string& prefix) {
  NamedTensors<S> out;
  for (const auto& [k, v] : from)
    if (k.rfind(prefix, 0) == 0) out.emplace(k.substr(prefix.size()), v);
  return out;
}

template <typename S>
Tensor<S> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<S> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<S>(dist(rng));
  return t;
}

/// Truncated normal at two standard deviations.
template <typename S>
Tensor<S> trunc_normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<S> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.values()) {
    double z;
    do z = dist(rng);
    while (std::abs(z) > 2.0);
    v = static_cast<S>(z * stddev);
  }
  return t;
}

}  // namespace mmdt
