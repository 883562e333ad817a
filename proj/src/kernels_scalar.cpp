#include "kdseg/kernels.hpp"

KDSEG_BEGIN_NAMESPACE

namespace {

void gemm_scalar(int m, int n, int k, const Scalar* a, int a_row, int a_col, const Scalar* b,
                 int ldb, Scalar* c, int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    Scalar* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = Scalar(0);
    }
    for (int kk = 0; kk < k; ++kk) {
      const Scalar aik = a[static_cast<std::ptrdiff_t>(i) * a_row + static_cast<std::ptrdiff_t>(kk) * a_col];
      const Scalar* brow = b + static_cast<std::ptrdiff_t>(kk) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

void gemm_abt_scalar(int m, int n, int p, const Scalar* a, int lda, const Scalar* b, int ldb,
                     Scalar* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    const Scalar* arow = a + static_cast<std::ptrdiff_t>(i) * lda;
    for (int j = 0; j < n; ++j) {
      const Scalar* brow = b + static_cast<std::ptrdiff_t>(j) * ldb;
      Scalar acc = 0;
      for (int q = 0; q < p; ++q) acc += arow[q] * brow[q];
      c[static_cast<std::ptrdiff_t>(i) * ldc + j] += acc;
    }
  }
}

void momentum_update_scalar(std::size_t n, Scalar* w, Scalar* v, const Scalar* g, Scalar lr,
                            Scalar momentum) {
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    w[i] -= lr * v[i];
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Backend::kScalar, "scalar", &gemm_scalar, &gemm_abt_scalar,
                                 &momentum_update_scalar};
  return table;
}

KDSEG_END_NAMESPACE
