#include <cstdlib>
#include <cstring>

#include "urbanclip/kernels/kernels.hpp"

namespace urbanclip::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(URBANCLIP_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

template <class T>
struct Table {
  void (*gemm)(std::size_t, std::size_t, std::size_t, const T*, std::size_t,
               const T*, std::size_t, T*, std::size_t, bool);
  T (*dot)(const T*, const T*, std::size_t);
  void (*axpy)(T, const T*, T*, std::size_t);
};

Isa select_isa() {
  const char* env = std::getenv("URBANCLIP_ISA");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return Isa::kScalar;
  return cpu_has_avx2() ? Isa::kAvx2 : Isa::kScalar;
}

template <class T>
const Table<T>& table() {
  static const Table<T> t = [] {
#if defined(URBANCLIP_HAVE_AVX2)
    if (active_isa() == Isa::kAvx2) {
      return Table<T>{&avx2::gemm<T>, &avx2::dot<T>, &avx2::axpy<T>};
    }
#endif
    return Table<T>{&scalar::gemm<T>, &scalar::dot<T>, &scalar::axpy<T>};
  }();
  return t;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  return isa == Isa::kAvx2 ? "avx2" : "scalar";
}

Isa active_isa() {
  static const Isa isa = select_isa();
  return isa;
}

bool avx2_available() {
  static const bool ok = cpu_has_avx2();
  return ok;
}

template <class T>
void gemm(std::size_t M, std::size_t N, std::size_t K, const T* A,
          std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc,
          bool accumulate) {
  table<T>().gemm(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  return table<T>().dot(a, b, n);
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  table<T>().axpy(alpha, x, y, n);
}

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = r0 + kBlock < rows ? r0 + kBlock : rows;
      const std::size_t c1 = c0 + kBlock < cols ? c0 + kBlock : cols;
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

#define URBANCLIP_INSTANTIATE(T)                                              \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*,     \
                        std::size_t, const T*, std::size_t, T*, std::size_t, \
                        bool);                                               \
  template T dot<T>(const T*, const T*, std::size_t);                        \
  template void axpy<T>(T, const T*, T*, std::size_t);                       \
  template void transpose<T>(std::size_t, std::size_t, const T*, T*);

URBANCLIP_INSTANTIATE(float)
URBANCLIP_INSTANTIATE(double)
#undef URBANCLIP_INSTANTIATE

}  // namespace urbanclip::kernels
