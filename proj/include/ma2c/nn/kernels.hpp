#pragma once

#include <cstddef>
#include <span>
#include <string_view>

namespace ma2c::nn::kernels {

/// Instruction set of a kernel variant.
enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

/// Dense double-precision kernels. Matrices are row-major rows x cols.
struct KernelTable {
  // y = W x + b   (b may be null)
  void (*gemv)(const double *w, const double *x, const double *b, double *y, std::size_t rows, std::size_t cols);
  // dx += W^T dy
  void (*gemv_t_acc)(const double *w, const double *dy, double *dx, std::size_t rows, std::size_t cols);
  // G += dy x^T
  void (*ger)(const double *dy, const double *x, double *g, std::size_t rows, std::size_t cols);
  double (*dot)(const double *a, const double *b, std::size_t n);
  // y += a x
  void (*axpy)(double a, const double *x, double *y, std::size_t n);
  double (*sum_squares)(const double *x, std::size_t n);
  // v = decay v + (1 - decay) g^2 ; p -= lr g / (sqrt(v) + eps)
  void (*rmsprop)(double *p, double *v, const double *g, std::size_t n, double lr, double decay, double eps);
};

/// Table for a specific variant. Throws ContractError if the variant was not
/// compiled in or the CPU lacks it.
const KernelTable &table(Isa isa);

bool available(Isa isa);

/// Variant selected at startup: the best available ISA, unless the
/// MA2C_ISA environment variable names another ("scalar" or "avx2").
Isa active_isa();
const KernelTable &active();

/// Override the active variant (tests, benchmarks).
void set_active(Isa isa);

// Span conveniences over the active table.
void gemv(std::span<const double> w, std::span<const double> x, std::span<const double> b, std::span<double> y);
void gemv_t_acc(std::span<const double> w, std::span<const double> dy, std::span<double> dx);
void ger(std::span<const double> dy, std::span<const double> x, std::span<double> g);
double dot(std::span<const double> a, std::span<const double> b);
void axpy(double a, std::span<const double> x, std::span<double> y);
double sum_squares(std::span<const double> x);

} // namespace ma2c::nn::kernels
