#include "urbanclip/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "urbanclip/kernels/kernels.hpp"

namespace urbanclip::nn {
namespace {

namespace k = urbanclip::kernels;

template <class T>
Tensor<T>* grad_of(Node<T>& node, std::size_t input) {
  Node<T>& in = *node.inputs[input];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

template <class T>
const Tensor<T>& value_of(Node<T>& node, std::size_t input) {
  return node.inputs[input]->value;
}

template <class T>
Tensor<T> transposed(const Tensor<T>& x) {
  const std::size_t r = x.rows(), c = x.cols();
  Tensor<T> t(Shape{c, r});
  k::transpose(r, c, x.data(), t.data());
  return t;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
  }
}

void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     shape_str(s));
  }
}

template <class T>
Var<T> elementwise(const Var<T>& x, T (*f)(T), T (*df)(T, T)) {
  Tensor<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = f(xv[i]);
  return make_result<T>(std::move(y), {x}, [df](Node<T>& node) {
    Tensor<T>* gx = grad_of(node, 0);
    if (!gx) return;
    const auto& xv = value_of(node, 0);
    for (std::size_t i = 0; i < gx->numel(); ++i) {
      (*gx)[i] += node.grad[i] * df(xv[i], node.value[i]);
    }
  });
}

}  // namespace

// ---------------------------------------------------------------------------

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
  const Shape& xs = x.shape();
  const Shape& ws = W.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0]) {
    throw ShapeError("linear: input " + shape_str(xs) +
                     " incompatible with weight " + shape_str(ws));
  }
  const std::size_t rows = x.value().rows(), in = ws[0], out = ws[1];
  if (b && (b.value().numel() != out)) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) +
                     " incompatible with weight " + shape_str(ws));
  }
  Shape ys = xs;
  ys.back() = out;
  Tensor<T> y(ys);
  k::gemm<T>(rows, out, in, x.value().data(), in, W.value().data(), out,
             y.data(), out, false);
  if (b) {
    const T* bv = b.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
      T* yr = y.data() + r * out;
      for (std::size_t c = 0; c < out; ++c) yr[c] += bv[c];
    }
  }
  std::vector<Var<T>> inputs{x, W};
  if (b) inputs.push_back(b);
  const bool has_bias = static_cast<bool>(b);
  return make_result<T>(
      std::move(y), std::move(inputs),
      [rows, in, out, has_bias](Node<T>& node) {
        const Tensor<T>& dy = node.grad;
        if (Tensor<T>* gx = grad_of(node, 0)) {
          const Tensor<T> wt = transposed(value_of(node, 1));
          k::gemm<T>(rows, in, out, dy.data(), out, wt.data(), in, gx->data(),
                     in, true);
        }
        if (Tensor<T>* gw = grad_of(node, 1)) {
          const Tensor<T>& xv = value_of(node, 0);
          Tensor<T> xt(Shape{in, rows});
          k::transpose(rows, in, xv.data(), xt.data());
          k::gemm<T>(in, out, rows, xt.data(), rows, dy.data(), out,
                     gw->data(), out, true);
        }
        if (has_bias) {
          if (Tensor<T>* gb = grad_of(node, 2)) {
            for (std::size_t r = 0; r < rows; ++r) {
              const T* dr = dy.data() + r * out;
              for (std::size_t c = 0; c < out; ++c) (*gb)[c] += dr[c];
            }
          }
        }
      });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank2(a.shape(), "matmul");
  require_rank2(b.shape(), "matmul");
  if (a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const std::size_t n = a.shape()[0], kk = a.shape()[1], m = b.shape()[1];
  Tensor<T> y(Shape{n, m});
  k::gemm<T>(n, m, kk, a.value().data(), kk, b.value().data(), m, y.data(), m,
             false);
  return make_result<T>(std::move(y), {a, b}, [n, kk, m](Node<T>& node) {
    const Tensor<T>& dy = node.grad;
    if (Tensor<T>* ga = grad_of(node, 0)) {
      const Tensor<T> bt = transposed(value_of(node, 1));
      k::gemm<T>(n, kk, m, dy.data(), m, bt.data(), kk, ga->data(), kk, true);
    }
    if (Tensor<T>* gb = grad_of(node, 1)) {
      const Tensor<T> at = transposed(value_of(node, 0));
      k::gemm<T>(kk, m, n, at.data(), n, dy.data(), m, gb->data(), m, true);
    }
  });
}

template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require_rank2(a.shape(), "matmul_nt");
  require_rank2(b.shape(), "matmul_nt");
  if (a.shape()[1] != b.shape()[1]) {
    throw ShapeError("matmul_nt: shape mismatch " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()) + "^T");
  }
  const std::size_t n = a.shape()[0], kk = a.shape()[1], m = b.shape()[0];
  Tensor<T> y(Shape{n, m});
  const Tensor<T> bt = transposed(b.value());
  k::gemm<T>(n, m, kk, a.value().data(), kk, bt.data(), m, y.data(), m, false);
  return make_result<T>(std::move(y), {a, b}, [n, kk, m](Node<T>& node) {
    const Tensor<T>& dy = node.grad;
    if (Tensor<T>* ga = grad_of(node, 0)) {
      k::gemm<T>(n, kk, m, dy.data(), m, value_of(node, 1).data(), kk,
                 ga->data(), kk, true);
    }
    if (Tensor<T>* gb = grad_of(node, 1)) {
      const Tensor<T> dyt = transposed(dy);
      k::gemm<T>(m, kk, n, dyt.data(), n, value_of(node, 0).data(), kk,
                 gb->data(), kk, true);
    }
  });
}

template <class T>
Var<T> transpose(const Var<T>& x) {
  require_rank2(x.shape(), "transpose");
  return make_result<T>(transposed(x.value()), {x}, [](Node<T>& node) {
    if (Tensor<T>* gx = grad_of(node, 0)) {
      const Tensor<T> g = transposed(node.grad);
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
    }
  });
}

template <class T>
Var<T> add_scaled(const Var<T>& a, T wa, const Var<T>& b, T wb) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) {
    y[i] = wa * a.value()[i] + wb * b.value()[i];
  }
  return make_result<T>(std::move(y), {a, b}, [wa, wb](Node<T>& node) {
    if (Tensor<T>* ga = grad_of(node, 0)) {
      for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += wa * node.grad[i];
    }
    if (Tensor<T>* gb = grad_of(node, 1)) {
      for (std::size_t i = 0; i < gb->numel(); ++i) (*gb)[i] += wb * node.grad[i];
    }
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(y), {a, b}, [](Node<T>& node) {
    for (std::size_t in = 0; in < 2; ++in) {
      if (Tensor<T>* g = grad_of(node, in)) {
        k::axpy<T>(T(1), node.grad.data(), g->data(), g->numel());
      }
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(y), {a, b}, [](Node<T>& node) {
    if (Tensor<T>* ga = grad_of(node, 0)) {
      for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += node.grad[i];
    }
    if (Tensor<T>* gb = grad_of(node, 1)) {
      for (std::size_t i = 0; i < gb->numel(); ++i) (*gb)[i] -= node.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(y), {a, b}, [](Node<T>& node) {
    const Tensor<T>& av = value_of(node, 0);
    const Tensor<T>& bv = value_of(node, 1);
    if (Tensor<T>* ga = grad_of(node, 0)) {
      for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += node.grad[i] * bv[i];
    }
    if (Tensor<T>* gb = grad_of(node, 1)) {
      for (std::size_t i = 0; i < gb->numel(); ++i) (*gb)[i] += node.grad[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = s * x.value()[i];
  return make_result<T>(std::move(y), {x}, [s](Node<T>& node) {
    if (Tensor<T>* gx = grad_of(node, 0)) {
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += s * node.grad[i];
    }
  });
}

template <class T>
Var<T> scale_by_exp_neg(const Var<T>& x, const Var<T>& s) {
  if (s.value().numel() != 1) {
    throw ShapeError("scale_by_exp_neg: scale must be scalar, got " +
                     shape_str(s.shape()));
  }
  const T f = std::exp(-s.value()[0]);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = f * x.value()[i];
  return make_result<T>(std::move(y), {x, s}, [f](Node<T>& node) {
    if (Tensor<T>* gx = grad_of(node, 0)) {
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += f * node.grad[i];
    }
    if (Tensor<T>* gs = grad_of(node, 1)) {
      T acc = T(0);
      for (std::size_t i = 0; i < node.grad.numel(); ++i) {
        acc -= node.grad[i] * node.value[i];
      }
      (*gs)[0] += acc;
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T total = T(0);
  for (T v : x.value().span()) total += v;
  return make_result<T>(Tensor<T>::scalar(total), {x}, [](Node<T>& node) {
    if (Tensor<T>* gx = grad_of(node, 0)) {
      const T g = node.grad[0];
      for (auto& v : gx->span()) v += g;
    }
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  const std::size_t n = x.value().numel();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  T total = T(0);
  for (T v : x.value().span()) total += v;
  return make_result<T>(
      Tensor<T>::scalar(total / T(n)), {x}, [n](Node<T>& node) {
        if (Tensor<T>* gx = grad_of(node, 0)) {
          const T g = node.grad[0] / T(n);
          for (auto& v : gx->span()) v += g;
        }
      });
}

// ---------------------------------------------------------------------------

template <class T>
Var<T> relu(const Var<T>& x) {
  return elementwise<T>(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> gelu(const Var<T>& x) {
  static constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T kA = T(0.044715);
  return elementwise<T>(
      x,
      [](T v) {
        return T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
      },
      [](T v, T) {
        const T u = kC * (v + kA * v * v * v);
        const T t = std::tanh(u);
        const T du = kC * (T(1) + T(3) * kA * v * v);
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
      });
}

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
  Tensor<T> y = softmax(x.value(), x.value().rank() - 1);
  return make_result<T>(std::move(y), {x}, [](Node<T>& node) {
    Tensor<T>* gx = grad_of(node, 0);
    if (!gx) return;
    const std::size_t rows = node.value.rows(), cols = node.value.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = node.value.row(r);
      const T* dy = node.grad.row(r);
      T inner = T(0);
      for (std::size_t c = 0; c < cols; ++c) inner += dy[c] * y[c];
      T* g = gx->row(r);
      for (std::size_t c = 0; c < cols; ++c) g[c] += y[c] * (dy[c] - inner);
    }
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T eps) {
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  if (cols == 0) throw ShapeError("layer_norm over an empty axis");
  if (gain.value().numel() != cols || bias.value().numel() != cols) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) +
                     " / bias " + shape_str(bias.shape()) +
                     " incompatible with input " + shape_str(x.shape()));
  }
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  Tensor<T> rstd(Shape{rows});
  const T* g = gain.value().data();
  const T* b = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.value().row(r);
    T mu = T(0);
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= T(cols);
    T var = T(0);
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= T(cols);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    T* hr = xhat.row(r);
    T* yr = y.row(r);
    for (std::size_t c = 0; c < cols; ++c) {
      hr[c] = (xr[c] - mu) * rs;
      yr[c] = g[c] * hr[c] + b[c];
    }
  }
  return make_result<T>(
      std::move(y), {x, gain, bias},
      [rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](
          Node<T>& node) {
        const T* g = value_of(node, 1).data();
        Tensor<T>* gx = grad_of(node, 0);
        Tensor<T>* gg = grad_of(node, 1);
        Tensor<T>* gb = grad_of(node, 2);
        std::vector<T> dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dy = node.grad.row(r);
          const T* hr = xhat.row(r);
          if (gg) {
            for (std::size_t c = 0; c < cols; ++c) (*gg)[c] += dy[c] * hr[c];
          }
          if (gb) {
            for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += dy[c];
          }
          if (gx) {
            T m1 = T(0), m2 = T(0);
            for (std::size_t c = 0; c < cols; ++c) {
              dxhat[c] = dy[c] * g[c];
              m1 += dxhat[c];
              m2 += dxhat[c] * hr[c];
            }
            m1 /= T(cols);
            m2 /= T(cols);
            T* out = gx->row(r);
            for (std::size_t c = 0; c < cols; ++c) {
              out[c] += rstd[r] * (dxhat[c] - m1 - hr[c] * m2);
            }
          }
        }
      });
}

template <class T>
Var<T> l2_normalize_rows(const Var<T>& x) {
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  Tensor<T> y(x.shape());
  Tensor<T> norms(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.value().row(r);
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) s += xr[c] * xr[c];
    const T n = std::max(std::sqrt(s), T(1e-12));
    norms[r] = n;
    for (std::size_t c = 0; c < cols; ++c) y.row(r)[c] = xr[c] / n;
  }
  return make_result<T>(
      std::move(y), {x},
      [rows, cols, norms = std::move(norms)](Node<T>& node) {
        Tensor<T>* gx = grad_of(node, 0);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* y = node.value.row(r);
          const T* dy = node.grad.row(r);
          T inner = T(0);
          for (std::size_t c = 0; c < cols; ++c) inner += y[c] * dy[c];
          T* g = gx->row(r);
          for (std::size_t c = 0; c < cols; ++c) {
            g[c] += (dy[c] - y[c] * inner) / norms[r];
          }
        }
      });
}

template <class T>
Var<T> row_norms(const Var<T>& x) {
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  Tensor<T> y(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.value().row(r);
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) s += xr[c] * xr[c];
    y[r] = std::sqrt(s);
  }
  return make_result<T>(std::move(y), {x}, [rows, cols](Node<T>& node) {
    Tensor<T>* gx = grad_of(node, 0);
    if (!gx) return;
    const Tensor<T>& xv = value_of(node, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const T n = node.value[r];
      if (n <= T(0)) continue;  // subgradient 0 at the origin
      const T f = node.grad[r] / n;
      k::axpy<T>(f, xv.row(r), gx->row(r), cols);
    }
  });
}

template <class T>
Var<T> dropout(const Var<T>& x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  if (p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const T s = T(1.0 / (1.0 - p));
  Tensor<T> mask(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) {
    mask[i] = keep(rng) ? s : T(0);
    y[i] = x.value()[i] * mask[i];
  }
  return make_result<T>(std::move(y), {x}, [mask = std::move(mask)](Node<T>& node) {
    if (Tensor<T>* gx = grad_of(node, 0)) {
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += node.grad[i] * mask[i];
    }
  });
}

// ---------------------------------------------------------------------------

template <class T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& rows) {
  const std::size_t cols = x.value().cols(), n = x.value().rows();
  Tensor<T> y(Shape{rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[r]) +
                       " out of range for " + shape_str(x.shape()));
    }
    std::copy_n(x.value().row(rows[r]), cols, y.row(r));
  }
  return make_result<T>(std::move(y), {x}, [rows, cols](Node<T>& node) {
    Tensor<T>* gx = grad_of(node, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      T* dst = gx->data() + rows[r] * cols;
      const T* src = node.grad.row(r);
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t cols = parts[0].value().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " +
                       shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += p.value().rows();
  }
  Tensor<T> y(Shape{total, cols});
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    std::copy(p.value().span().begin(), p.value().span().end(), y.data() + at * cols);
    at += p.value().rows();
  }
  return make_result<T>(std::move(y), parts, [offsets, cols](Node<T>& node) {
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (Tensor<T>* g = grad_of(node, i)) {
        k::axpy<T>(T(1), node.grad.data() + offsets[i] * cols, g->data(),
                   g->numel());
      }
    }
  });
}

template <class T>
Var<T> group_mean_rows(const Var<T>& x, std::size_t group) {
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  if (group == 0 || rows % group != 0) {
    throw ShapeError("group_mean_rows: " + std::to_string(rows) +
                     " rows not divisible into groups of " +
                     std::to_string(group));
  }
  const std::size_t out_rows = rows / group;
  const T inv = T(1) / T(group);
  Tensor<T> y(Shape{out_rows, cols});
  for (std::size_t o = 0; o < out_rows; ++o) {
    T* yr = y.row(o);
    for (std::size_t g = 0; g < group; ++g) {
      const T* xr = x.value().row(o * group + g);
      for (std::size_t c = 0; c < cols; ++c) yr[c] += xr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] *= inv;
  }
  return make_result<T>(std::move(y), {x}, [group, cols, out_rows, inv](Node<T>& node) {
    Tensor<T>* gx = grad_of(node, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < out_rows; ++o) {
      for (std::size_t g = 0; g < group; ++g) {
        k::axpy<T>(inv, node.grad.row(o), gx->row(o * group + g), cols);
      }
    }
  });
}

// ---------------------------------------------------------------------------

AttentionLayout AttentionLayout::single(std::size_t q_len, std::size_t k_len,
                                        MaskKind mask) {
  AttentionLayout layout;
  layout.segments.push_back({0, q_len, 0, k_len, mask, {}});
  return layout;
}

AttentionLayout AttentionLayout::self_blocks(
    const std::vector<std::size_t>& lengths, MaskKind mask) {
  AttentionLayout layout;
  std::size_t at = 0;
  for (std::size_t len : lengths) {
    layout.segments.push_back({at, len, at, len, mask, {}});
    at += len;
  }
  return layout;
}

namespace {

// Range of keys a query may see, plus an optional explicit filter.
struct KeyRange {
  std::size_t end;
  const std::uint8_t* allowed;
};

inline KeyRange key_range(const AttentionSegment& s, std::size_t i) {
  switch (s.mask) {
    case MaskKind::kCausal:
      return {i + 1, nullptr};
    case MaskKind::kExplicit:
      return {s.k_len, s.allowed.data() + i * s.k_len};
    case MaskKind::kNone:
      break;
  }
  return {s.k_len, nullptr};
}

}  // namespace

template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& kv_keys, const Var<T>& v,
                 const AttentionLayout& layout, std::size_t n_heads, T scale) {
  const Tensor<T>& Q = q.value();
  const Tensor<T>& K = kv_keys.value();
  const Tensor<T>& V = v.value();
  const std::size_t d = Q.cols();
  if (K.cols() != d || V.cols() != d || K.rows() != V.rows()) {
    throw ShapeError("attention: Q " + shape_str(q.shape()) + ", K " +
                     shape_str(kv_keys.shape()) + ", V " + shape_str(v.shape()) +
                     " are not compatible");
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) +
                      " not divisible by " + std::to_string(n_heads) + " heads");
  }
  const std::size_t dh = d / n_heads;
  if (scale == T(0)) scale = T(1) / std::sqrt(T(dh));

  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& s : layout.segments) {
    if (s.q_begin + s.q_len > Q.rows() || s.k_begin + s.k_len > K.rows()) {
      throw ShapeError("attention: segment exceeds input rows");
    }
    if (s.mask == MaskKind::kCausal && s.q_len > s.k_len) {
      throw ShapeError("attention: causal segment needs q_len <= k_len");
    }
    if (s.mask == MaskKind::kExplicit && s.allowed.size() != s.q_len * s.k_len) {
      throw ShapeError("attention: explicit mask has wrong size");
    }
    offsets.push_back(total);
    total += n_heads * s.q_len * s.k_len;
  }

  auto probs = std::make_shared<std::vector<T>>(total, T(0));
  Tensor<T> out(Shape{Q.rows(), d});
  for (std::size_t si = 0; si < layout.segments.size(); ++si) {
    const AttentionSegment& s = layout.segments[si];
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const KeyRange kr = key_range(s, i);
        const T* qi = Q.row(s.q_begin + i) + h * dh;
        T* p = probs->data() + offsets[si] + (h * s.q_len + i) * s.k_len;
        T mx = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < kr.end; ++j) {
          if (kr.allowed && !kr.allowed[j]) continue;
          p[j] = k::dot<T>(qi, K.row(s.k_begin + j) + h * dh, dh) * scale;
          mx = std::max(mx, p[j]);
          any = true;
        }
        if (!any) {
          throw DomainError("attention: query row " + std::to_string(i) +
                            " has every key masked");
        }
        T denom = T(0);
        for (std::size_t j = 0; j < kr.end; ++j) {
          if (kr.allowed && !kr.allowed[j]) continue;
          p[j] = std::exp(p[j] - mx);
          denom += p[j];
        }
        T* oi = out.row(s.q_begin + i) + h * dh;
        for (std::size_t j = 0; j < kr.end; ++j) {
          if (kr.allowed && !kr.allowed[j]) continue;
          p[j] /= denom;
          k::axpy<T>(p[j], V.row(s.k_begin + j) + h * dh, oi, dh);
        }
      }
    }
  }

  return make_result<T>(
      std::move(out), {q, kv_keys, v},
      [layout, offsets, probs, n_heads, dh, scale](Node<T>& node) {
        const Tensor<T>& Q = value_of(node, 0);
        const Tensor<T>& K = value_of(node, 1);
        const Tensor<T>& V = value_of(node, 2);
        Tensor<T>* gq = grad_of(node, 0);
        Tensor<T>* gk = grad_of(node, 1);
        Tensor<T>* gv = grad_of(node, 2);
        std::vector<T> dp;
        for (std::size_t si = 0; si < layout.segments.size(); ++si) {
          const AttentionSegment& s = layout.segments[si];
          dp.assign(s.k_len, T(0));
          for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t i = 0; i < s.q_len; ++i) {
              const KeyRange kr = key_range(s, i);
              const T* p =
                  probs->data() + offsets[si] + (h * s.q_len + i) * s.k_len;
              const T* doi = node.grad.row(s.q_begin + i) + h * dh;
              T inner = T(0);
              for (std::size_t j = 0; j < kr.end; ++j) {
                if (kr.allowed && !kr.allowed[j]) continue;
                dp[j] = k::dot<T>(doi, V.row(s.k_begin + j) + h * dh, dh);
                inner += p[j] * dp[j];
              }
              for (std::size_t j = 0; j < kr.end; ++j) {
                if (kr.allowed && !kr.allowed[j]) continue;
                if (gv) k::axpy<T>(p[j], doi, gv->row(s.k_begin + j) + h * dh, dh);
                const T ds = p[j] * (dp[j] - inner) * scale;
                if (gq) {
                  k::axpy<T>(ds, K.row(s.k_begin + j) + h * dh,
                             gq->row(s.q_begin + i) + h * dh, dh);
                }
                if (gk) {
                  k::axpy<T>(ds, Q.row(s.q_begin + i) + h * dh,
                             gk->row(s.k_begin + j) + h * dh, dh);
                }
              }
            }
          }
        }
      });
}

template <class T>
Var<T> multi_head_attention(const Var<T>& x_q, const Var<T>& x_kv,
                            const AttentionWeights<T>& w, std::size_t n_heads,
                            const AttentionLayout& layout) {
  const std::size_t d = w.W_Q.shape().at(1);
  if (n_heads == 0 || d % n_heads != 0) {
    throw ConfigError("multi_head_attention: width " + std::to_string(d) +
                      " not divisible by " + std::to_string(n_heads) + " heads");
  }
  const Var<T> q = linear(x_q, w.W_Q, Var<T>());
  const Var<T> kk = linear(x_kv, w.W_K, Var<T>());
  const Var<T> v = linear(x_kv, w.W_V, Var<T>());
  const Var<T> heads = attention(q, kk, v, layout, n_heads);
  return linear(heads, w.W_O, w.b_O);
}

// ---------------------------------------------------------------------------

template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& targets) {
  const std::size_t rows = logits.value().rows(), cols = logits.value().cols();
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for logits " + shape_str(logits.shape()));
  }
  std::size_t count = 0;
  T total = T(0);
  Tensor<T> probs(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= cols) {
      throw ShapeError("cross_entropy: target " + std::to_string(targets[r]) +
                       " out of range for " + std::to_string(cols) + " classes");
    }
    const T* x = logits.value().row(r);
    const T mx = *std::max_element(x, x + cols);
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      probs.row(r)[c] = std::exp(x[c] - mx);
      s += probs.row(r)[c];
    }
    for (std::size_t c = 0; c < cols; ++c) probs.row(r)[c] /= s;
    total += (mx + std::log(s)) - x[targets[r]];
    ++count;
  }
  if (count == 0) throw DomainError("cross_entropy: every position is masked");
  const T inv = T(1) / T(count);
  return make_result<T>(
      Tensor<T>::scalar(total * inv), {logits},
      [targets, rows, cols, inv, probs = std::move(probs)](Node<T>& node) {
        Tensor<T>* gx = grad_of(node, 0);
        if (!gx) return;
        const T g = node.grad[0] * inv;
        for (std::size_t r = 0; r < rows; ++r) {
          if (targets[r] < 0) continue;
          T* out = gx->row(r);
          const T* p = probs.row(r);
          for (std::size_t c = 0; c < cols; ++c) out[c] += g * p[c];
          out[targets[r]] -= g;
        }
      });
}

template <class T>
Var<T> mse(const Var<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "mse");
  const std::size_t n = target.numel();
  if (n == 0) throw ShapeError("mse of empty tensors");
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T e = pred.value()[i] - target[i];
    total += e * e;
  }
  return make_result<T>(
      Tensor<T>::scalar(total / T(n)), {pred}, [target, n](Node<T>& node) {
        Tensor<T>* gp = grad_of(node, 0);
        if (!gp) return;
        const T g = node.grad[0] * T(2) / T(n);
        const Tensor<T>& pv = value_of(node, 0);
        for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g * (pv[i] - target[i]);
      });
}

// ---------------------------------------------------------------------------

#define URBANCLIP_INSTANTIATE(T)                                               \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);        \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                       \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                    \
  template Var<T> transpose(const Var<T>&);                                   \
  template Var<T> add(const Var<T>&, const Var<T>&);                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                          \
  template Var<T> add_scaled(const Var<T>&, T, const Var<T>&, T);             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                          \
  template Var<T> scale(const Var<T>&, T);                                    \
  template Var<T> scale_by_exp_neg(const Var<T>&, const Var<T>&);             \
  template Var<T> sum(const Var<T>&);                                         \
  template Var<T> mean(const Var<T>&);                                        \
  template Var<T> relu(const Var<T>&);                                        \
  template Var<T> gelu(const Var<T>&);                                        \
  template Var<T> softmax_rows(const Var<T>&);                                \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T); \
  template Var<T> l2_normalize_rows(const Var<T>&);                           \
  template Var<T> row_norms(const Var<T>&);                                   \
  template Var<T> dropout(const Var<T>&, double, std::mt19937_64&);           \
  template Var<T> gather_rows(const Var<T>&, const std::vector<std::size_t>&); \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                    \
  template Var<T> group_mean_rows(const Var<T>&, std::size_t);                \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&,      \
                            const AttentionLayout&, std::size_t, T);          \
  template Var<T> multi_head_attention(const Var<T>&, const Var<T>&,          \
                                       const AttentionWeights<T>&,            \
                                       std::size_t, const AttentionLayout&);  \
  template Var<T> cross_entropy(const Var<T>&, const std::vector<int>&);      \
  template Var<T> mse(const Var<T>&, const Tensor<T>&);

URBANCLIP_INSTANTIATE(float)
URBANCLIP_INSTANTIATE(double)
#undef URBANCLIP_INSTANTIATE

}  // namespace urbanclip::nn
