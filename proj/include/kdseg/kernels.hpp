#pragma once

#include <cstddef>

#include "kdseg/scalar.hpp"

KDSEG_BEGIN_NAMESPACE

enum class Backend { kScalar, kAvx2 };

/// Inner-loop kernels used by convolution and the optimizer. Every backend
/// must agree with the scalar table up to floating-point reassociation.
struct KernelTable {
  Backend backend;
  const char* name;

  /// C[M,N] (+)= A[M,K] * B[K,N] with A(i,k) = a[i*a_row + k*a_col].
  /// The strided A lets the same kernel serve W*X and W^T*X.
  void (*gemm)(int m, int n, int k, const Scalar* a, int a_row, int a_col, const Scalar* b,
               int ldb, Scalar* c, int ldc, bool accumulate);

  /// C[M,N] += A[M,P] * B[N,P]^T.
  void (*gemm_abt)(int m, int n, int p, const Scalar* a, int lda, const Scalar* b, int ldb,
                   Scalar* c, int ldc);

  /// v = momentum*v + g; w -= lr*v.
  void (*momentum_update)(std::size_t n, Scalar* w, Scalar* v, const Scalar* g, Scalar lr,
                          Scalar momentum);
};

const KernelTable& scalar_kernels();
/// The AVX2+FMA table, or nullptr when it is not compiled in or the CPU lacks it.
const KernelTable* avx2_kernels();

/// Table used by the ops. Chosen once from KDSEG_KERNELS (scalar|avx2|auto,
/// default auto) and the CPU feature set.
const KernelTable& active_kernels();
/// Forces a backend; throws ConfigError when unavailable.
void set_active_backend(Backend backend);

KDSEG_END_NAMESPACE
