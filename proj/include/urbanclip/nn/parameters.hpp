#pragma once

#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "urbanclip/nn/autograd.hpp"

namespace urbanclip::nn {

// Named learnable tensors in insertion order. Names are unique.
template <class T>
class ParameterSet {
 public:
  Var<T>& add(const std::string& name, Tensor<T> init);

  bool contains(const std::string& name) const {
    return index_.count(name) != 0;
  }
  Var<T>& at(const std::string& name);
  const Var<T>& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t total_numel() const;
  const std::vector<std::pair<std::string, Var<T>>>& entries() const {
    return entries_;
  }
  std::vector<std::pair<std::string, Var<T>>>& mutable_entries() {
    return entries_;
  }

  void zero_grad();
  void set_requires_grad(bool on);
  // Same names and values in another precision; fresh graph leaves.
  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, v] : entries_) {
      out.add(name, v.value().template cast<U>()).set_requires_grad(
          v.requires_grad());
    }
    return out;
  }
  // Deep copy of values into fresh leaves.
  ParameterSet clone() const { return cast<T>(); }

  // Bytewise equality of every value.
  bool same_values(const ParameterSet& other) const;

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace init {

// Normal(0, sigma) resampled outside +-2 sigma.
template <class T>
Tensor<T> trunc_normal(Shape shape, double sigma, std::mt19937_64& rng);

}  // namespace init

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> moments;
};

// One bias-corrected Adam update using the gradients held by `params`.
// Parameters without a gradient are treated as having a zero gradient.
// A non-finite gradient raises NumericError naming the parameter before
// anything is modified.
template <class T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state);

}  // namespace urbanclip::nn
