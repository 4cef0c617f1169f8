#pragma once

// Dense arithmetic kernels used by every tensor op.
//
// Each kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2/FMA variant. The variant is selected once per process from CPUID;
// setting URBANCLIP_ISA=scalar in the environment forces the reference path.
//
// Contract shared by all variants: the value written to C[i][j] depends only
// on row i of A, column j of B and K. Blocking never changes the per-element
// accumulation order, so a row computes bit-identically whatever other rows
// share the call.

#include <cstddef>
#include <string_view>

namespace urbanclip::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

// The ISA chosen for this process.
Isa active_isa();

// True when the CPU and the build both provide the AVX2/FMA variants.
bool avx2_available();

// C[M,N] (+)= A[M,K] * B[K,N], all row-major with explicit leading dims.
template <class T>
void gemm(std::size_t M, std::size_t N, std::size_t K, const T* A,
          std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc,
          bool accumulate);

template <class T>
T dot(const T* a, const T* b, std::size_t n);

// y += alpha * x
template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n);

// out[c][r] = in[r][c]
template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out);

namespace scalar {
template <class T>
void gemm(std::size_t M, std::size_t N, std::size_t K, const T* A,
          std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc,
          bool accumulate);
template <class T>
T dot(const T* a, const T* b, std::size_t n);
template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
// Only callable when avx2_available() is true.
template <class T>
void gemm(std::size_t M, std::size_t N, std::size_t K, const T* A,
          std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc,
          bool accumulate);
template <class T>
T dot(const T* a, const T* b, std::size_t n);
template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n);
}  // namespace avx2

}  // namespace urbanclip::kernels
