// AVX2+FMA kernels. Compiled with -mavx2 -mfma on x86-64 only; the
// dispatcher never hands these out unless cpuid reports both features.
//
// GEMMs tile the M (or K) dimension by 4 so each streamed row of the
// other operand is reused four times from registers/L1.

#include "srpo/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstddef>
#include <vector>

namespace srpo::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// C(MxN) = A(MxK) * B(NxK)^T via row-of-A dot row-of-B. Used directly for
// small M where the horizontal sums are cheap relative to a B transpose.
void gemm_nt_dots_avx2(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t n, std::size_t k,
                       bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      __m256d s0 = _mm256_setzero_pd();
      __m256d s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd();
      __m256d s3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d vb = _mm256_loadu_pd(bj + p);
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a0 + p), vb, s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a1 + p), vb, s1);
        s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a2 + p), vb, s2);
        s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a3 + p), vb, s3);
      }
      double d0 = hsum(s0), d1 = hsum(s1), d2 = hsum(s2), d3 = hsum(s3);
      for (; p < k; ++p) {
        const double bv = bj[p];
        d0 += a0[p] * bv;
        d1 += a1[p] * bv;
        d2 += a2[p] * bv;
        d3 += a3[p] * bv;
      }
      if (accumulate) {
        c[(i + 0) * n + j] += d0;
        c[(i + 1) * n + j] += d1;
        c[(i + 2) * n + j] += d2;
        c[(i + 3) * n + j] += d3;
      } else {
        c[(i + 0) * n + j] = d0;
        c[(i + 1) * n + j] = d1;
        c[(i + 2) * n + j] = d2;
        c[(i + 3) * n + j] = d3;
      }
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = dot_avx2(ai, b + j * k, k);
      if (accumulate) {
        c[i * n + j] += d;
      } else {
        c[i * n + j] = d;
      }
    }
  }
}

// C(MxN) = A(MxK) * B(KxN). 2x4 microkernel: two C rows stay in registers
// per j-chunk while four broadcast A scalars fold four B rows in, so each
// C chunk is loaded and stored once per four k steps.
void gemm_nn_avx2(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k, bool accumulate) {
  if (!accumulate) {
    for (std::size_t q = 0; q < m * n; ++q) c[q] = 0.0;
  }
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    double* c0 = c + (i + 0) * n;
    double* c1 = c + (i + 1) * n;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double* b0 = b + (p + 0) * n;
      const double* b1 = b + (p + 1) * n;
      const double* b2 = b + (p + 2) * n;
      const double* b3 = b + (p + 3) * n;
      const __m256d a00 = _mm256_set1_pd(a0[p + 0]);
      const __m256d a01 = _mm256_set1_pd(a0[p + 1]);
      const __m256d a02 = _mm256_set1_pd(a0[p + 2]);
      const __m256d a03 = _mm256_set1_pd(a0[p + 3]);
      const __m256d a10 = _mm256_set1_pd(a1[p + 0]);
      const __m256d a11 = _mm256_set1_pd(a1[p + 1]);
      const __m256d a12 = _mm256_set1_pd(a1[p + 2]);
      const __m256d a13 = _mm256_set1_pd(a1[p + 3]);
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        const __m256d vb0 = _mm256_loadu_pd(b0 + j);
        const __m256d vb1 = _mm256_loadu_pd(b1 + j);
        const __m256d vb2 = _mm256_loadu_pd(b2 + j);
        const __m256d vb3 = _mm256_loadu_pd(b3 + j);
        __m256d v0 = _mm256_loadu_pd(c0 + j);
        __m256d v1 = _mm256_loadu_pd(c1 + j);
        v0 = _mm256_fmadd_pd(a00, vb0, v0);
        v1 = _mm256_fmadd_pd(a10, vb0, v1);
        v0 = _mm256_fmadd_pd(a01, vb1, v0);
        v1 = _mm256_fmadd_pd(a11, vb1, v1);
        v0 = _mm256_fmadd_pd(a02, vb2, v0);
        v1 = _mm256_fmadd_pd(a12, vb2, v1);
        v0 = _mm256_fmadd_pd(a03, vb3, v0);
        v1 = _mm256_fmadd_pd(a13, vb3, v1);
        _mm256_storeu_pd(c0 + j, v0);
        _mm256_storeu_pd(c1 + j, v1);
      }
      for (; j < n; ++j) {
        c0[j] += a0[p] * b0[j] + a0[p + 1] * b1[j] + a0[p + 2] * b2[j] +
                 a0[p + 3] * b3[j];
        c1[j] += a1[p] * b0[j] + a1[p + 1] * b1[j] + a1[p + 2] * b2[j] +
                 a1[p + 3] * b3[j];
      }
    }
    for (; p < k; ++p) {
      axpy_avx2(a0[p], b + p * n, c0, n);
      axpy_avx2(a1[p], b + p * n, c1, n);
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      axpy_avx2(a[i * k + p], b + p * n, ci, n);
    }
  }
}

// C(MxN) = A(MxK) * B(NxK)^T. For batched shapes the transposed copy of B
// lets the work run through the broadcast-FMA nn microkernel with no
// horizontal reductions; tiny-M calls keep the direct dot-product path.
void gemm_nt_avx2(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k, bool accumulate) {
  if (m < 8 || n * k == 0) {
    gemm_nt_dots_avx2(a, b, c, m, n, k, accumulate);
    return;
  }
  thread_local std::vector<double> scratch;
  scratch.resize(n * k);
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b + j * k;
    for (std::size_t p = 0; p < k; ++p) {
      scratch[p * n + j] = bj[p];
    }
  }
  gemm_nn_avx2(a, scratch.data(), c, m, n, k, accumulate);
}

// C(MxN) (+)= A(KxM)^T * B(KxN). Same 2x4 microkernel pattern as gemm_nn:
// two C rows per j-chunk fold in four rank-1 updates, so each C chunk is
// touched once per four K steps.
void gemm_tn_avx2(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t n, std::size_t k, bool accumulate) {
  if (!accumulate) {
    for (std::size_t q = 0; q < m * n; ++q) c[q] = 0.0;
  }
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    double* c0 = c + (i + 0) * n;
    double* c1 = c + (i + 1) * n;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double* b0 = b + (p + 0) * n;
      const double* b1 = b + (p + 1) * n;
      const double* b2 = b + (p + 2) * n;
      const double* b3 = b + (p + 3) * n;
      const __m256d a00 = _mm256_set1_pd(a[(p + 0) * m + i]);
      const __m256d a01 = _mm256_set1_pd(a[(p + 1) * m + i]);
      const __m256d a02 = _mm256_set1_pd(a[(p + 2) * m + i]);
      const __m256d a03 = _mm256_set1_pd(a[(p + 3) * m + i]);
      const __m256d a10 = _mm256_set1_pd(a[(p + 0) * m + i + 1]);
      const __m256d a11 = _mm256_set1_pd(a[(p + 1) * m + i + 1]);
      const __m256d a12 = _mm256_set1_pd(a[(p + 2) * m + i + 1]);
      const __m256d a13 = _mm256_set1_pd(a[(p + 3) * m + i + 1]);
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        const __m256d vb0 = _mm256_loadu_pd(b0 + j);
        const __m256d vb1 = _mm256_loadu_pd(b1 + j);
        const __m256d vb2 = _mm256_loadu_pd(b2 + j);
        const __m256d vb3 = _mm256_loadu_pd(b3 + j);
        __m256d v0 = _mm256_loadu_pd(c0 + j);
        __m256d v1 = _mm256_loadu_pd(c1 + j);
        v0 = _mm256_fmadd_pd(a00, vb0, v0);
        v1 = _mm256_fmadd_pd(a10, vb0, v1);
        v0 = _mm256_fmadd_pd(a01, vb1, v0);
        v1 = _mm256_fmadd_pd(a11, vb1, v1);
        v0 = _mm256_fmadd_pd(a02, vb2, v0);
        v1 = _mm256_fmadd_pd(a12, vb2, v1);
        v0 = _mm256_fmadd_pd(a03, vb3, v0);
        v1 = _mm256_fmadd_pd(a13, vb3, v1);
        _mm256_storeu_pd(c0 + j, v0);
        _mm256_storeu_pd(c1 + j, v1);
      }
      for (; j < n; ++j) {
        c0[j] += a[(p + 0) * m + i] * b0[j] + a[(p + 1) * m + i] * b1[j] +
                 a[(p + 2) * m + i] * b2[j] + a[(p + 3) * m + i] * b3[j];
        c1[j] += a[(p + 0) * m + i + 1] * b0[j] +
                 a[(p + 1) * m + i + 1] * b1[j] +
                 a[(p + 2) * m + i + 1] * b2[j] +
                 a[(p + 3) * m + i + 1] * b3[j];
      }
    }
    for (; p < k; ++p) {
      axpy_avx2(a[p * m + i], b + p * n, c0, n);
      axpy_avx2(a[p * m + i + 1], b + p * n, c1, n);
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      axpy_avx2(a[p * m + i], b + p * n, ci, n);
    }
  }
}

void relu_avx2(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad_avx2(const double* pre, const double* up, double* out,
                    std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(pre + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(mask, _mm256_loadu_pd(up + i)));
  }
  for (; i < n; ++i) out[i] = pre[i] > 0.0 ? up[i] : 0.0;
}

void adam_step_avx2(double* p, double* m, double* v, const double* g,
                    std::size_t n, const AdamScalars& s) {
  const __m256d b1 = _mm256_set1_pd(s.beta1);
  const __m256d b2 = _mm256_set1_pd(s.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - s.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - s.beta2);
  const __m256d inv_bias1 = _mm256_set1_pd(1.0 / s.bias1);
  const __m256d inv_bias2 = _mm256_set1_pd(1.0 / s.bias2);
  const __m256d eps = _mm256_set1_pd(s.eps);
  const __m256d lr = _mm256_set1_pd(s.lr);
  const __m256d wd = _mm256_set1_pd(s.weight_decay);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vg = _mm256_loadu_pd(g + i);
    __m256d vm = _mm256_loadu_pd(m + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    vm = _mm256_fmadd_pd(omb1, vg, _mm256_mul_pd(b1, vm));
    vv = _mm256_fmadd_pd(omb2, _mm256_mul_pd(vg, vg), _mm256_mul_pd(b2, vv));
    _mm256_storeu_pd(m + i, vm);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_mul_pd(vm, inv_bias1);
    const __m256d vhat = _mm256_mul_pd(vv, inv_bias2);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), eps);
    __m256d vp = _mm256_loadu_pd(p + i);
    const __m256d update =
        _mm256_fmadd_pd(wd, vp, _mm256_div_pd(mhat, denom));
    vp = _mm256_fnmadd_pd(lr, update, vp);
    _mm256_storeu_pd(p + i, vp);
  }
  for (; i < n; ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
    const double mhat = m[i] / s.bias1;
    const double vhat = v[i] / s.bias2;
    p[i] -= s.lr * (mhat / (std::sqrt(vhat) + s.eps) + s.weight_decay * p[i]);
  }
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double sumsq_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(vx, vx, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * x[i];
  return s;
}

bool all_finite_avx2(const double* x, std::size_t n) {
  // x - x is 0 for finite values and NaN for NaN/Inf.
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    const __m256d diff = _mm256_sub_pd(vx, vx);
    const __m256d ok = _mm256_cmp_pd(diff, zero, _CMP_EQ_OQ);
    if (_mm256_movemask_pd(ok) != 0xF) return false;
  }
  for (; i < n; ++i) {
    if (!std::isfinite(x[i])) return false;
  }
  return true;
}

constexpr Ops kAvx2Ops = {
    "avx2",         dot_avx2,     axpy_avx2,      gemm_nt_avx2,
    gemm_nn_avx2,   gemm_tn_avx2, relu_avx2,      relu_grad_avx2,
    adam_step_avx2, sum_avx2,     sumsq_avx2,     all_finite_avx2,
};

}  // namespace

const Ops* avx2_ops_or_null() { return &kAvx2Ops; }

}  // namespace srpo::kernels

#else  // non-x86 build: no AVX2 table

namespace srpo::kernels {
const Ops* avx2_ops_or_null() { return nullptr; }
}  // namespace srpo::kernels

#endif
