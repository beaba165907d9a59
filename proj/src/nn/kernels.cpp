#include "ma2c/nn/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "ma2c/error.hpp"

namespace ma2c::nn::kernels {

namespace scalar {
extern const KernelTable kTable;
}
#ifdef MA2C_HAVE_AVX2
namespace avx2 {
extern const KernelTable kTable;
}
#endif

namespace {

bool cpu_has_avx2() {
#if defined(MA2C_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() {
  if (const char *env = std::getenv("MA2C_ISA")) {
    const std::string want(env);
    if (want == "scalar") return Isa::Scalar;
    if (want == "avx2" && available(Isa::Avx2)) return Isa::Avx2;
  }
  return available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<const KernelTable *> &current() {
  static std::atomic<const KernelTable *> ptr{&table(detect())};
  return ptr;
}

} // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool available(Isa isa) {
  if (isa == Isa::Scalar) return true;
  static const bool avx2 = cpu_has_avx2();
  return avx2;
}

const KernelTable &table(Isa isa) {
  if (!available(isa)) throw ContractError("kernel variant " + std::string(isa_name(isa)) + " is unavailable");
#ifdef MA2C_HAVE_AVX2
  if (isa == Isa::Avx2) return avx2::kTable;
#endif
  return scalar::kTable;
}

const KernelTable &active() { return *current().load(std::memory_order_relaxed); }

Isa active_isa() {
#ifdef MA2C_HAVE_AVX2
  if (&active() == &avx2::kTable) return Isa::Avx2;
#endif
  return Isa::Scalar;
}

void set_active(Isa isa) { current().store(&table(isa), std::memory_order_relaxed); }

namespace {
void require(bool ok, const char *what) {
  if (!ok) throw ContractError(std::string("kernel shape mismatch in ") + what);
}
} // namespace

void gemv(std::span<const double> w, std::span<const double> x, std::span<const double> b, std::span<double> y) {
  require(w.size() == y.size() * x.size() && (b.empty() || b.size() == y.size()), "gemv");
  active().gemv(w.data(), x.data(), b.empty() ? nullptr : b.data(), y.data(), y.size(), x.size());
}

void gemv_t_acc(std::span<const double> w, std::span<const double> dy, std::span<double> dx) {
  require(w.size() == dy.size() * dx.size(), "gemv_t_acc");
  active().gemv_t_acc(w.data(), dy.data(), dx.data(), dy.size(), dx.size());
}

void ger(std::span<const double> dy, std::span<const double> x, std::span<double> g) {
  require(g.size() == dy.size() * x.size(), "ger");
  active().ger(dy.data(), x.data(), g.data(), dy.size(), x.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot");
  return active().dot(a.data(), b.data(), a.size());
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), "axpy");
  active().axpy(a, x.data(), y.data(), x.size());
}

double sum_squares(std::span<const double> x) { return active().sum_squares(x.data(), x.size()); }

} // namespace ma2c::nn::kernels
