#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "eedvit/autodiff.hpp"
#include "eedvit/errors.hpp"
#include "eedvit/tensor.hpp"

namespace eedvit {

template <typename T> struct Parameter {
  std::string name;
  Matrix<T> value;
};

/// Ordered, named collection of trainable matrices. Order is insertion order
/// and is what checkpoints, optimizers and gradient buffers index by.
template <typename T> class ParameterSet {
public:
  int add(std::string name, Matrix<T> value) {
    if (index_.contains(name)) {
      throw ConfigError("duplicate parameter name '" + name + "'");
    }
    const int idx = static_cast<int>(params_.size());
    index_.emplace(name, idx);
    params_.push_back({std::move(name), std::move(value)});
    return idx;
  }

  std::size_t size() const noexcept { return params_.size(); }
  bool contains(const std::string& name) const { return index_.contains(name); }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw ConfigError("no parameter named '" + name + "'");
    }
    return it->second;
  }

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  Parameter<T>& at(const std::string& name) { return params_[static_cast<std::size_t>(index_of(name))]; }
  const Parameter<T>& at(const std::string& name) const {
    return params_[static_cast<std::size_t>(index_of(name))];
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      n += static_cast<std::size_t>(p.value.size());
    }
    return n;
  }

  bool all_finite() const {
    for (const auto& p : params_) {
      if (!p.value.allFinite()) {
        return false;
      }
    }
    return true;
  }

  bool same_layout(const ParameterSet& other) const {
    if (other.size() != size()) {
      return false;
    }
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& a = params_[i];
      const auto& b = other.params_[i];
      if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
        return false;
      }
    }
    return true;
  }

  Gradients<T> zero_gradients() const {
    Gradients<T> g;
    g.reserve(params_.size());
    for (const auto& p : params_) {
      g.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
    }
    return g;
  }

  template <typename U> ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : params_) {
      out.add(p.name, p.value.template cast<U>());
    }
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (!a.same_layout(b)) {
      return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.params_[i].value != b.params_[i].value) {
        return false;
      }
    }
    return true;
  }

private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, int> index_;
};

/// Tape leaves for every parameter of a set, created once per tape so that
/// several forward passes on the same tape share them.
template <typename T> class BoundParameters {
public:
  BoundParameters(Tape<T>& tape, const ParameterSet<T>& params) : params_(&params) {
    vars_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      vars_.push_back(tape.parameter(params[i].value, static_cast<int>(i)));
    }
  }

  Var operator[](int index) const { return vars_[static_cast<std::size_t>(index)]; }
  Var operator[](const std::string& name) const { return vars_[static_cast<std::size_t>(params_->index_of(name))]; }
  const ParameterSet<T>& set() const { return *params_; }

private:
  const ParameterSet<T>* params_;
  std::vector<Var> vars_;
};

} // namespace eedvit
