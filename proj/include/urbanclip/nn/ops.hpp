#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "urbanclip/nn/autograd.hpp"

namespace urbanclip::nn {

// ---------------------------------------------------------------------------
// Dense algebra

// Affine map over the last axis: x[..., in] * W[in, out] + b[out].
// `b` may be undefined (no bias).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& W, const Var<T>& b);

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);  // [n,k]x[k,m]

template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);  // [n,k]x[m,k]^T

template <class T>
Var<T> transpose(const Var<T>& x);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

// wa * a + wb * b, same shapes.
template <class T>
Var<T> add_scaled(const Var<T>& a, T wa, const Var<T>& b, T wb);

// Elementwise product, same shapes.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> scale(const Var<T>& x, T s);

// x * exp(-s) for a scalar s (learnable inverse temperature).
template <class T>
Var<T> scale_by_exp_neg(const Var<T>& x, const Var<T>& s);

template <class T>
Var<T> sum(const Var<T>& x);

template <class T>
Var<T> mean(const Var<T>& x);

// ---------------------------------------------------------------------------
// Elementwise / row-wise

template <class T>
Var<T> relu(const Var<T>& x);

// tanh approximation.
template <class T>
Var<T> gelu(const Var<T>& x);

template <class T>
Var<T> softmax_rows(const Var<T>& x);

// Per-row standardization (eps inside the sqrt) followed by gain*x + bias.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T eps = T(1e-5));

template <class T>
Var<T> l2_normalize_rows(const Var<T>& x);

// Euclidean norm of each row: [n, c] -> [n].
template <class T>
Var<T> row_norms(const Var<T>& x);

// Inverted dropout. Identity when p == 0.
template <class T>
Var<T> dropout(const Var<T>& x, double p, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Row plumbing

template <class T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& rows);

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);

// Mean of each consecutive block of `group` rows: [n*group, c] -> [n, c].
template <class T>
Var<T> group_mean_rows(const Var<T>& x, std::size_t group);

// ---------------------------------------------------------------------------
// Attention

enum class MaskKind { kNone, kCausal, kExplicit };

// One independent attention problem inside a packed batch: queries
// [q_begin, q_begin+q_len) attend to keys [k_begin, k_begin+k_len).
struct AttentionSegment {
  std::size_t q_begin = 0;
  std::size_t q_len = 0;
  std::size_t k_begin = 0;
  std::size_t k_len = 0;
  MaskKind mask = MaskKind::kNone;
  // q_len * k_len entries, nonzero = may attend. Only for kExplicit.
  std::vector<std::uint8_t> allowed;
};

struct AttentionLayout {
  std::vector<AttentionSegment> segments;

  static AttentionLayout single(std::size_t q_len, std::size_t k_len,
                                MaskKind mask = MaskKind::kNone);
  // Equal-length self-attention blocks laid end to end.
  static AttentionLayout self_blocks(const std::vector<std::size_t>& lengths,
                                     MaskKind mask);
};

// softmax(Q K^T * scale) V per segment and per head; heads are contiguous
// column blocks of width d / n_heads. scale defaults to 1/sqrt(d_head).
// A query row with every key masked is a DomainError.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const AttentionLayout& layout, std::size_t n_heads,
                 T scale = T(0));

template <class T>
struct AttentionWeights {
  Var<T> W_Q, W_K, W_V, W_O, b_O;
};

// Projects queries from x_q and keys/values from x_kv, attends per head,
// concatenates heads and applies W_O. Self-attention when x_q is x_kv.
template <class T>
Var<T> multi_head_attention(const Var<T>& x_q, const Var<T>& x_kv,
                            const AttentionWeights<T>& w, std::size_t n_heads,
                            const AttentionLayout& layout);

// ---------------------------------------------------------------------------
// Losses

// Mean over rows with target >= 0 of logsumexp(row) - row[target].
// Rows with a negative target are ignored; no valid row is a DomainError.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& targets);

template <class T>
Var<T> mse(const Var<T>& pred, const Tensor<T>& target);

}  // namespace urbanclip::nn
