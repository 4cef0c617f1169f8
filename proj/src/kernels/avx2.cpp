// AVX2 + FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma; nothing here may run before avx2_available() says so.

#include "urbanclip/kernels/kernels.hpp"

#if defined(URBANCLIP_HAVE_AVX2)

#include <immintrin.h>

#include <cmath>

namespace urbanclip::kernels::avx2 {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
  using type = __m256;
  static constexpr std::size_t kLanes = 8;
  static type zero() { return _mm256_setzero_ps(); }
  static type load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, type v) { _mm256_storeu_ps(p, v); }
  static type broadcast(float x) { return _mm256_set1_ps(x); }
  static type fmadd(type a, type b, type c) { return _mm256_fmadd_ps(a, b, c); }
  static float hsum(type v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Vec<double> {
  using type = __m256d;
  static constexpr std::size_t kLanes = 4;
  static type zero() { return _mm256_setzero_pd(); }
  static type load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, type v) { _mm256_storeu_pd(p, v); }
  static type broadcast(double x) { return _mm256_set1_pd(x); }
  static type fmadd(type a, type b, type c) { return _mm256_fmadd_pd(a, b, c); }
  static double hsum(type v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

// R rows x (2 * lanes) columns register tile.
template <class T, int R>
inline void tile_wide(std::size_t K, const T* A, std::size_t lda, const T* B,
                      std::size_t ldb, T* C, std::size_t ldc, bool accumulate) {
  using V = Vec<T>;
  constexpr std::size_t L = V::kLanes;
  typename V::type acc0[R], acc1[R];
  for (int r = 0; r < R; ++r) {
    if (accumulate) {
      acc0[r] = V::load(C + r * ldc);
      acc1[r] = V::load(C + r * ldc + L);
    } else {
      acc0[r] = V::zero();
      acc1[r] = V::zero();
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    const auto b0 = V::load(B + k * ldb);
    const auto b1 = V::load(B + k * ldb + L);
    for (int r = 0; r < R; ++r) {
      const auto a = V::broadcast(A[r * lda + k]);
      acc0[r] = V::fmadd(a, b0, acc0[r]);
      acc1[r] = V::fmadd(a, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    V::store(C + r * ldc, acc0[r]);
    V::store(C + r * ldc + L, acc1[r]);
  }
}

// R rows x lanes columns.
template <class T, int R>
inline void tile_narrow(std::size_t K, const T* A, std::size_t lda, const T* B,
                        std::size_t ldb, T* C, std::size_t ldc,
                        bool accumulate) {
  using V = Vec<T>;
  typename V::type acc[R];
  for (int r = 0; r < R; ++r) {
    acc[r] = accumulate ? V::load(C + r * ldc) : V::zero();
  }
  for (std::size_t k = 0; k < K; ++k) {
    const auto b = V::load(B + k * ldb);
    for (int r = 0; r < R; ++r) {
      acc[r] = V::fmadd(V::broadcast(A[r * lda + k]), b, acc[r]);
    }
  }
  for (int r = 0; r < R; ++r) V::store(C + r * ldc, acc[r]);
}

// Remaining columns, one at a time. std::fma rounds like the vector lanes.
template <class T, int R>
inline void tile_tail(std::size_t K, std::size_t ncols, const T* A,
                      std::size_t lda, const T* B, std::size_t ldb, T* C,
                      std::size_t ldc, bool accumulate) {
  for (int r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < ncols; ++j) {
      T acc = accumulate ? C[r * ldc + j] : T(0);
      for (std::size_t k = 0; k < K; ++k) {
        acc = std::fma(A[r * lda + k], B[k * ldb + j], acc);
      }
      C[r * ldc + j] = acc;
    }
  }
}

template <class T, int R>
void row_block(std::size_t N, std::size_t K, const T* A, std::size_t lda,
               const T* B, std::size_t ldb, T* C, std::size_t ldc,
               bool accumulate) {
  constexpr std::size_t L = Vec<T>::kLanes;
  std::size_t j = 0;
  for (; j + 2 * L <= N; j += 2 * L) {
    tile_wide<T, R>(K, A, lda, B + j, ldb, C + j, ldc, accumulate);
  }
  for (; j + L <= N; j += L) {
    tile_narrow<T, R>(K, A, lda, B + j, ldb, C + j, ldc, accumulate);
  }
  if (j < N) tile_tail<T, R>(K, N - j, A, lda, B + j, ldb, C + j, ldc, accumulate);
}

}  // namespace

template <class T>
void gemm(std::size_t M, std::size_t N, std::size_t K, const T* A,
          std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc,
          bool accumulate) {
  constexpr int kRows = 6;
  std::size_t i = 0;
  for (; i + kRows <= M; i += kRows) {
    row_block<T, kRows>(N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc,
                        accumulate);
  }
  for (; i < M; ++i) {
    row_block<T, 1>(N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc,
                    accumulate);
  }
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t L = V::kLanes;
  auto acc0 = V::zero();
  auto acc1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * L <= n; i += 2 * L) {
    acc0 = V::fmadd(V::load(a + i), V::load(b + i), acc0);
    acc1 = V::fmadd(V::load(a + i + L), V::load(b + i + L), acc1);
  }
  for (; i + L <= n; i += L) {
    acc0 = V::fmadd(V::load(a + i), V::load(b + i), acc0);
  }
  T s = V::hsum(acc0) + V::hsum(acc1);
  for (; i < n; ++i) s = std::fma(a[i], b[i], s);
  return s;
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t L = V::kLanes;
  const auto va = V::broadcast(alpha);
  std::size_t i = 0;
  for (; i + L <= n; i += L) {
    V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

#define URBANCLIP_INSTANTIATE(T)                                              \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*,     \
                        std::size_t, const T*, std::size_t, T*, std::size_t, \
                        bool);                                               \
  template T dot<T>(const T*, const T*, std::size_t);                        \
  template void axpy<T>(T, const T*, T*, std::size_t);

URBANCLIP_INSTANTIATE(float)
URBANCLIP_INSTANTIATE(double)
#undef URBANCLIP_INSTANTIATE

}  // namespace urbanclip::kernels::avx2

#endif  // URBANCLIP_HAVE_AVX2
