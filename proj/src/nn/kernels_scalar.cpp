#include <cmath>
#include <cstddef>

#include "ma2c/nn/kernels.hpp"

namespace ma2c::nn::kernels::scalar {

void gemv(const double *w, const double *x, const double *b, double *y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double *row = w + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = b ? acc + b[r] : acc;
  }
}

void gemv_t_acc(const double *w, const double *dy, double *dx, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = dy[r];
    if (s == 0.0) continue;
    const double *row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dx[c] += s * row[c];
  }
}

void ger(const double *dy, const double *x, double *g, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = dy[r];
    if (s == 0.0) continue;
    double *row = g + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += s * x[c];
  }
}

double dot(const double *a, const double *b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double a, const double *x, double *y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double sum_squares(const double *x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

void rmsprop(double *p, double *v, const double *g, std::size_t n, double lr, double decay, double eps) {
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = decay * v[i] + (1.0 - decay) * g[i] * g[i];
    p[i] -= lr * g[i] / (std::sqrt(v[i]) + eps);
  }
}

extern const KernelTable kTable;
const KernelTable kTable{gemv, gemv_t_acc, ger, dot, axpy, sum_squares, rmsprop};

} // namespace ma2c::nn::kernels::scalar
