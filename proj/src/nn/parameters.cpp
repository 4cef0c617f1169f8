#include "urbanclip/nn/parameters.hpp"

#include <cmath>
#include <cstring>

namespace urbanclip::nn {

template <class T>
Var<T>& ParameterSet<T>::add(const std::string& name, Tensor<T> init) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, Var<T>(std::move(init), true));
  return entries_.back().second;
}

template <class T>
Var<T>& ParameterSet<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw NotFoundError("no parameter named " + name);
  return entries_[it->second].second;
}

template <class T>
const Var<T>& ParameterSet<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw NotFoundError("no parameter named " + name);
  return entries_[it->second].second;
}

template <class T>
std::size_t ParameterSet<T>::total_numel() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().numel();
  return n;
}

template <class T>
void ParameterSet<T>::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

template <class T>
void ParameterSet<T>::set_requires_grad(bool on) {
  for (auto& [name, v] : entries_) v.set_requires_grad(on);
}

template <class T>
bool ParameterSet<T>::same_values(const ParameterSet& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [na, va] = entries_[i];
    const auto& [nb, vb] = other.entries_[i];
    if (na != nb || va.shape() != vb.shape()) return false;
    if (std::memcmp(va.value().data(), vb.value().data(),
                    va.value().numel() * sizeof(T)) != 0) {
      return false;
    }
  }
  return true;
}

namespace init {

template <class T>
Tensor<T> trunc_normal(Shape shape, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sigma);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.span()) {
    double x = normal(rng);
    while (std::abs(x) > 2.0 * sigma) x = normal(rng);
    v = static_cast<T>(x);
  }
  return t;
}

template Tensor<float> trunc_normal(Shape, double, std::mt19937_64&);
template Tensor<double> trunc_normal(Shape, double, std::mt19937_64&);

}  // namespace init

template <class T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state) {
  for (const auto& [name, v] : params.entries()) {
    if (!v.has_grad()) continue;
    if (!all_finite(v.grad())) {
      throw NumericError("non-finite gradient for parameter " + name);
    }
  }
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const T b1 = T(c.beta1), b2 = T(c.beta2);
  for (auto& [name, v] : params.mutable_entries()) {
    auto [it, inserted] = state.moments.try_emplace(
        name, Tensor<T>(v.shape()), Tensor<T>(v.shape()));
    auto& [m, s] = it->second;
    if (m.shape() != v.shape()) {
      throw ShapeError("adam moment shape mismatch for " + name);
    }
    if (!v.has_grad()) continue;
    const Tensor<T>& g = v.grad();
    Tensor<T>& p = v.mutable_value();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      s[i] = b2 * s[i] + (T(1) - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double shat = static_cast<double>(s[i]) / bc2;
      p[i] -= static_cast<T>(c.lr * mhat / (std::sqrt(shat) + c.eps));
    }
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void adam_step(ParameterSet<float>&, AdamState<float>&);
template void adam_step(ParameterSet<double>&, AdamState<double>&);

}  // namespace urbanclip::nn
