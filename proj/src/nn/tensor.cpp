#include "urbanclip/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "urbanclip/nn/autograd.hpp"

namespace urbanclip::nn {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.span().begin(), t.span().end(),
                     [](T v) { return std::isfinite(v); });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(x.shape()));
  }
  const std::size_t n = x.extent(axis);
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.extent(a);
  const std::size_t outer = n == 0 ? 0 : x.numel() / (n * inner);
  Tensor<T> y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = x[base];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
      T total = T(0);
      for (std::size_t i = 0; i < n; ++i) {
        const T e = std::exp(x[base + i * inner] - mx);
        y[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < n; ++i) y[base + i * inner] /= total;
    }
  }
  return y;
}

template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);
template Tensor<float> softmax(const Tensor<float>&, std::size_t);
template Tensor<double> softmax(const Tensor<double>&, std::size_t);

// ---------------------------------------------------------------------------

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
void backward(const Var<T>& root) {
  if (root.value().numel() != 1) {
    throw ShapeError("backward root must be a scalar, got shape " +
                     shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  // Graphs here are a few hundred nodes; a sorted vector is enough.
  std::vector<Node<T>*> visited_sorted;
  auto mark = [&](Node<T>* n) {
    auto it = std::lower_bound(visited_sorted.begin(), visited_sorted.end(), n);
    if (it != visited_sorted.end() && *it == n) return false;
    visited_sorted.insert(it, n);
    return true;
  };
  Node<T>* r = root.node().get();
  mark(r);
  stack.emplace_back(r, 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && mark(child)) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Intermediate gradients start fresh; leaves accumulate across calls.
  for (Node<T>* n : order) {
    if (n->backward) n->grad = Tensor<T>();
  }
  r->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.numel() == n->value.numel()) n->backward(*n);
  }
}

template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace urbanclip::nn
