#include "urbanclip/kernels/kernels.hpp"

namespace urbanclip::kernels::scalar {

template <class T>
void gemm(std::size_t M, std::size_t N, std::size_t K, const T* A,
          std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc,
          bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < N; ++j) c[j] = T(0);
    }
    const T* a = A + i * lda;
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = a[k];
      const T* b = B + k * ldb;
      for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
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

}  // namespace urbanclip::kernels::scalar
