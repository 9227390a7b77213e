#include "htmpc/kernels.hpp"

// AVX2+FMA variants of the vector kernels. This file is the only translation
// unit compiled with -mavx2 -mfma; nothing here runs unless the CPUID probe in
// avx2_backend() succeeds.
//
// Elementwise kernels deliberately avoid FMA so they stay bitwise identical to
// the scalar reference. Reductions and matvecs use FMA and differ in rounding.

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace htmpc::kernels {

namespace {

double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += x[i] * y[i];
  return hsum(acc) + tail;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), t));
  }
  for (; i < n; ++i) {
    const double t = a * x[i];
    y[i] = y[i] + t;
  }
}

void scaled_sum_avx2(double a, const double* x, double b, const double* y, double* out,
                     std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  const __m256d bv = _mm256_set1_pd(b);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t1 = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    const __m256d t2 = _mm256_mul_pd(bv, _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(t1, t2));
  }
  for (; i < n; ++i) {
    const double t1 = a * x[i];
    const double t2 = b * y[i];
    out[i] = t1 + t2;
  }
}

void clamp_vec_avx2(const double* x, const double* lo, const double* hi, double* out,
                    std::size_t n) {
  std::size_t i = 0;
  // max/min ordering keeps NaN propagation identical to the scalar kernel:
  // maxpd/minpd return the second operand when either input is NaN.
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    v = _mm256_max_pd(_mm256_loadu_pd(lo + i), v);
    v = _mm256_min_pd(_mm256_loadu_pd(hi + i), v);
    _mm256_storeu_pd(out + i, v);
  }
  for (; i < n; ++i) {
    double v = x[i];
    v = v < lo[i] ? lo[i] : v;
    v = v > hi[i] ? hi[i] : v;
    out[i] = v;
  }
}

void extrapolate_avx2(const double* u, const double* u_prev, double beta, double* out,
                      std::size_t n) {
  const __m256d bv = _mm256_set1_pd(beta);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d uv = _mm256_loadu_pd(u + i);
    const __m256d d = _mm256_sub_pd(uv, _mm256_loadu_pd(u_prev + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(uv, _mm256_mul_pd(bv, d)));
  }
  for (; i < n; ++i) {
    const double d = u[i] - u_prev[i];
    const double t = beta * d;
    out[i] = u[i] + t;
  }
}

void matvec_acc_avx2(const double* a, std::size_t rows, std::size_t cols, const double* x,
                     double* y) {
  for (std::size_t j = 0; j < cols; ++j) {
    const __m256d xj = _mm256_set1_pd(x[j]);
    const double* col = a + j * rows;
    std::size_t i = 0;
    for (; i + 4 <= rows; i += 4) {
      const __m256d yv = _mm256_loadu_pd(y + i);
      _mm256_storeu_pd(y + i, _mm256_fmadd_pd(_mm256_loadu_pd(col + i), xj, yv));
    }
    for (; i < rows; ++i) y[i] += col[i] * x[j];
  }
}

void affine_avx2(const double* a, std::size_t rows, std::size_t cols, const double* x,
                 const double* b, double* y) {
  if (b) {
    for (std::size_t i = 0; i < rows; ++i) y[i] = b[i];
  } else {
    for (std::size_t i = 0; i < rows; ++i) y[i] = 0.0;
  }
  matvec_acc_avx2(a, rows, cols, x, y);
}

double diff_norm2_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double tail = 0.0;
  for (; i < n; ++i) {
    const double d = x[i] - y[i];
    tail += d * d;
  }
  return hsum(acc) + tail;
}

const Backend kAvx2 = {
    "avx2",         dot_avx2,    axpy_avx2,       scaled_sum_avx2,
    clamp_vec_avx2, extrapolate_avx2, affine_avx2, matvec_acc_avx2,
    diff_norm2_avx2,
};

}  // namespace

const Backend* avx2_backend() {
  static const bool supported =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &kAvx2 : nullptr;
}

}  // namespace htmpc::kernels

#else

namespace htmpc::kernels {

const Backend* avx2_backend() { return nullptr; }

}  // namespace htmpc::kernels

#endif
