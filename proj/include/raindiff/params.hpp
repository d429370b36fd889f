// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "raindiff/autograd.hpp"

#include <atomic>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>

namespace raindiff {

/// Named, ordered collection of trainable tensors belonging to one network.
///
/// Local names follow "level.block.tensor"; `qualified()` prepends the set
/// prefix to give the four-part "module.level.block.tensor" checkpoint name.
/// Lookups through `operator[]` are counted so that callers can assert a
/// set was never consulted.
template <typename Scalar>
class ParamSet {
 public:
  using Map = std::map<std::string, Var<Scalar>>;

  explicit ParamSet(std::string prefix = {})
      : prefix_(std::move(prefix)), reads_(std::make_shared<std::atomic<std::size_t>>(0)) {}

  ParamSet(const ParamSet& other)
      : prefix_(other.prefix_),
        params_(other.params_),
        reads_(std::make_shared<std::atomic<std::size_t>>(0)) {}
  ParamSet& operator=(const ParamSet& other) {
    prefix_ = other.prefix_;
    params_ = other.params_;
    reads_ = std::make_shared<std::atomic<std::size_t>>(0);
    return *this;
  }
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  const std::string& prefix() const { return prefix_; }
  std::string qualified(const std::string& local) const { return prefix_ + "." + local; }

  void add(const std::string& name, Tensor<Scalar> value) {
    if (!value.all_finite()) throw std::invalid_argument("param " + name + " is not finite");
    auto [it, inserted] = params_.emplace(name, Var<Scalar>::parameter(std::move(value)));
    if (!inserted) throw std::invalid_argument("duplicate parameter " + qualified(name));
  }

  /// Inserts an existing handle; the set then shares that leaf.
  void adopt(const std::string& name, Var<Scalar> var) {
    auto [it, inserted] = params_.emplace(name, std::move(var));
    if (!inserted) throw std::invalid_argument("duplicate parameter " + qualified(name));
  }

  const Var<Scalar>& operator[](const std::string& name) const {
    reads_->fetch_add(1, std::memory_order_relaxed);
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter " + qualified(name));
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  /// Mutable access to a parameter's storage, e.g. for optimizer updates.
  Tensor<Scalar>& value(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter " + qualified(name));
    return it->second.mutable_value();
  }

  const Map& entries() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t reads() const { return reads_->load(); }

  Index element_count() const {
    Index n = 0;
    for (const auto& [_, v] : params_) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }

  /// Fresh leaves with identical values; gradients and graph links are not copied.
  ParamSet clone() const {
    ParamSet out(prefix_);
    for (const auto& [name, v] : params_) out.add(name, v.value());
    return out;
  }

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out(prefix_);
    for (const auto& [name, v] : params_) out.add(name, v.value().template cast<Other>());
    return out;
  }

  bool identical(const ParamSet& other) const {
    if (params_.size() != other.params_.size()) return false;
    for (const auto& [name, v] : params_) {
      auto it = other.params_.find(name);
      if (it == other.params_.end() || !v.value().identical(it->second.value())) return false;
    }
    return true;
  }

 private:
  std::string prefix_;
  Map params_;
  std::shared_ptr<std::atomic<std::size_t>> reads_;
};

}  // namespace raindiff
