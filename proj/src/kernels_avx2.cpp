// Compiled with -mavx2 -mfma. Only reached after a runtime CPU check.
#include <immintrin.h>

#include "kdseg/kernels.hpp"

KDSEG_BEGIN_NAMESPACE

namespace {

// Lane mask enabling the first `count` (0..8) floats.
inline __m256i tail_mask(int count) {
  alignas(32) static const int kBits[16] = {-1, -1, -1, -1, -1, -1, -1, -1, 0, 0, 0, 0, 0, 0, 0, 0};
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kBits + 8 - count));
}

// MR rows x 16 columns.
template <int MR>
inline void gemm_block16(int k, const float* a, int a_row, int a_col, const float* b, int ldb,
                         float* c, int ldc, bool accumulate) {
  __m256 acc[MR][2];
  for (int r = 0; r < MR; ++r) {
    if (accumulate) {
      acc[r][0] = _mm256_loadu_ps(c + r * ldc);
      acc[r][1] = _mm256_loadu_ps(c + r * ldc + 8);
    } else {
      acc[r][0] = _mm256_setzero_ps();
      acc[r][1] = _mm256_setzero_ps();
    }
  }
  for (int kk = 0; kk < k; ++kk) {
    const float* brow = b + static_cast<std::ptrdiff_t>(kk) * ldb;
    const __m256 b0 = _mm256_loadu_ps(brow);
    const __m256 b1 = _mm256_loadu_ps(brow + 8);
    for (int r = 0; r < MR; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + static_cast<std::ptrdiff_t>(r) * a_row +
                                            static_cast<std::ptrdiff_t>(kk) * a_col);
      acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    _mm256_storeu_ps(c + r * ldc, acc[r][0]);
    _mm256_storeu_ps(c + r * ldc + 8, acc[r][1]);
  }
}

// MR rows x up to 8 columns (masked).
template <int MR>
inline void gemm_block8(int k, int cols, const float* a, int a_row, int a_col, const float* b,
                        int ldb, float* c, int ldc, bool accumulate) {
  const __m256i mask = tail_mask(cols);
  __m256 acc[MR];
  for (int r = 0; r < MR; ++r) {
    acc[r] = accumulate ? _mm256_maskload_ps(c + r * ldc, mask) : _mm256_setzero_ps();
  }
  for (int kk = 0; kk < k; ++kk) {
    const __m256 bv = _mm256_maskload_ps(b + static_cast<std::ptrdiff_t>(kk) * ldb, mask);
    for (int r = 0; r < MR; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + static_cast<std::ptrdiff_t>(r) * a_row +
                                            static_cast<std::ptrdiff_t>(kk) * a_col);
      acc[r] = _mm256_fmadd_ps(av, bv, acc[r]);
    }
  }
  for (int r = 0; r < MR; ++r) _mm256_maskstore_ps(c + r * ldc, mask, acc[r]);
}

template <int MR>
void gemm_rows(int n, int k, const float* a, int a_row, int a_col, const float* b, int ldb,
               float* c, int ldc, bool accumulate) {
  int j = 0;
  for (; j + 16 <= n; j += 16) {
    gemm_block16<MR>(k, a, a_row, a_col, b + j, ldb, c + j, ldc, accumulate);
  }
  for (; j < n; j += 8) {
    const int cols = n - j < 8 ? n - j : 8;
    gemm_block8<MR>(k, cols, a, a_row, a_col, b + j, ldb, c + j, ldc, accumulate);
  }
}

void gemm_avx2(int m, int n, int k, const float* a, int a_row, int a_col, const float* b, int ldb,
               float* c, int ldc, bool accumulate) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    gemm_rows<4>(n, k, a + static_cast<std::ptrdiff_t>(i) * a_row, a_row, a_col, b, ldb,
                 c + static_cast<std::ptrdiff_t>(i) * ldc, ldc, accumulate);
  }
  for (; i < m; ++i) {
    gemm_rows<1>(n, k, a + static_cast<std::ptrdiff_t>(i) * a_row, a_row, a_col, b, ldb,
                 c + static_cast<std::ptrdiff_t>(i) * ldc, ldc, accumulate);
  }
}

inline float hsum(__m256 v) {
  const __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 0x1));
  return _mm_cvtss_f32(s);
}

template <int NR>
inline void dot_block(int p, const float* arow, const float* b, int ldb, float* out) {
  __m256 acc[NR];
  for (int r = 0; r < NR; ++r) acc[r] = _mm256_setzero_ps();
  int q = 0;
  for (; q + 8 <= p; q += 8) {
    const __m256 av = _mm256_loadu_ps(arow + q);
    for (int r = 0; r < NR; ++r) {
      acc[r] = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + static_cast<std::ptrdiff_t>(r) * ldb + q),
                               acc[r]);
    }
  }
  if (q < p) {
    const __m256i mask = tail_mask(p - q);
    const __m256 av = _mm256_maskload_ps(arow + q, mask);
    for (int r = 0; r < NR; ++r) {
      acc[r] = _mm256_fmadd_ps(
          av, _mm256_maskload_ps(b + static_cast<std::ptrdiff_t>(r) * ldb + q, mask), acc[r]);
    }
  }
  for (int r = 0; r < NR; ++r) out[r] += hsum(acc[r]);
}

void gemm_abt_avx2(int m, int n, int p, const float* a, int lda, const float* b, int ldb, float* c,
                   int ldc) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::ptrdiff_t>(i) * lda;
    float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      dot_block<4>(p, arow, b + static_cast<std::ptrdiff_t>(j) * ldb, ldb, crow + j);
    }
    for (; j < n; ++j) dot_block<1>(p, arow, b + static_cast<std::ptrdiff_t>(j) * ldb, ldb, crow + j);
  }
}

void momentum_update_avx2(std::size_t n, float* w, float* v, const float* g, float lr,
                          float momentum) {
  const __m256 mv = _mm256_set1_ps(momentum);
  const __m256 lv = _mm256_set1_ps(lr);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vel = _mm256_fmadd_ps(mv, _mm256_loadu_ps(v + i), _mm256_loadu_ps(g + i));
    _mm256_storeu_ps(v + i, vel);
    _mm256_storeu_ps(w + i, _mm256_fnmadd_ps(lv, vel, _mm256_loadu_ps(w + i)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    w[i] -= lr * v[i];
  }
}

}  // namespace

const KernelTable& avx2_kernel_table() {
  static const KernelTable table{Backend::kAvx2, "avx2", &gemm_avx2, &gemm_abt_avx2,
                                 &momentum_update_avx2};
  return table;
}

KDSEG_END_NAMESPACE
