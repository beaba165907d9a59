// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "ma2c/nn/kernels.hpp"

namespace ma2c::nn::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double dot_impl(const double *a, const double *b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy_impl(double a, const double *x, double *y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

} // namespace

void gemv(const double *w, const double *x, const double *b, double *y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double acc = dot_impl(w + r * cols, x, cols);
    y[r] = b ? acc + b[r] : acc;
  }
}

void gemv_t_acc(const double *w, const double *dy, double *dx, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    if (dy[r] != 0.0) axpy_impl(dy[r], w + r * cols, dx, cols);
}

void ger(const double *dy, const double *x, double *g, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    if (dy[r] != 0.0) axpy_impl(dy[r], x, g + r * cols, cols);
}

double dot(const double *a, const double *b, std::size_t n) { return dot_impl(a, b, n); }

void axpy(double a, const double *x, double *y, std::size_t n) { axpy_impl(a, x, y, n); }

double sum_squares(const double *x, std::size_t n) { return dot_impl(x, x, n); }

void rmsprop(double *p, double *v, const double *g, std::size_t n, double lr, double decay, double eps) {
  const __m256d vd = _mm256_set1_pd(decay);
  const __m256d vk = _mm256_set1_pd(1.0 - decay);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d veps = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gi = _mm256_loadu_pd(g + i);
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(vd, _mm256_loadu_pd(v + i)), _mm256_mul_pd(vk, _mm256_mul_pd(gi, gi)));
    _mm256_storeu_pd(v + i, vi);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(vlr, gi), _mm256_add_pd(_mm256_sqrt_pd(vi), veps));
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
  }
  for (; i < n; ++i) {
    v[i] = decay * v[i] + (1.0 - decay) * g[i] * g[i];
    p[i] -= lr * g[i] / (std::sqrt(v[i]) + eps);
  }
}

extern const KernelTable kTable;
const KernelTable kTable{gemv, gemv_t_acc, ger, dot, axpy, sum_squares, rmsprop};

} // namespace ma2c::nn::kernels::avx2
