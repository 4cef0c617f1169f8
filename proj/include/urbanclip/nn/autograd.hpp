#pragma once

// Tape-free reverse-mode autodiff. Each op result holds pointers to its
// inputs and a closure that pushes its gradient back into them; backward()
// walks the graph in reverse topological order. Graph nodes die with the
// last Var handle that references them.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "urbanclip/nn/tensor.hpp"

namespace urbanclip::nn {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape() || grad.numel() != value.numel()) {
      grad = Tensor<T>(value.shape());
    }
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  explicit operator bool() const { return defined(); }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Gradient from the last backward(); zeros when none reached this node.
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.numel() == node_->value.numel(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Whether newly created ops record a backward closure. Thread-local so
// concurrent inference threads do not interfere with a training thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. When gradients are off or no input requires them the
// closure is dropped and the result is a constant.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

// Seeds d(root)/d(root) = 1 and propagates. Root must be a scalar.
template <class T>
void backward(const Var<T>& root);

}  // namespace urbanclip::nn
