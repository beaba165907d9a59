#include <doctest.h>

#include <cmath>
#include <vector>

#include "ma2c/error.hpp"
#include "ma2c/nn/kernels.hpp"
#include "ma2c/rng.hpp"

using namespace ma2c::nn;

namespace {

std::vector<double> random_vector(ma2c::Rng &rng, std::size_t n) {
  std::vector<double> v(n);
  for (double &x : v) x = rng.normal();
  return v;
}

void check_close(const std::vector<double> &a, const std::vector<double> &b, double tol = 1e-12) {
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) REQUIRE(std::abs(a[k] - b[k]) <= tol * (1.0 + std::abs(b[k])));
}

} // namespace

TEST_CASE("scalar kernels match naive loops") {
  const auto &s = kernels::table(kernels::Isa::Scalar);
  const double w[] = {1, 2, 3, 4, 5, 6}; // 2 x 3
  const double x[] = {1, -1, 2};
  const double b[] = {0.5, -0.5};
  double y[2];
  s.gemv(w, x, b, y, 2, 3);
  CHECK(y[0] == 1 - 2 + 6 + 0.5);
  CHECK(y[1] == 4 - 5 + 12 - 0.5);
  s.gemv(w, x, nullptr, y, 2, 3);
  CHECK(y[0] == 5);
  double dx[3] = {1, 1, 1};
  const double dy[] = {1, 2};
  s.gemv_t_acc(w, dy, dx, 2, 3);
  CHECK(dx[0] == 1 + 1 + 8);
  CHECK(dx[2] == 1 + 3 + 12);
  double g[6] = {};
  s.ger(dy, x, g, 2, 3);
  CHECK(g[4] == -2);
  CHECK(s.dot(x, x, 3) == 6);
  CHECK(s.sum_squares(w, 6) == 91);
  double acc[3] = {1, 1, 1};
  s.axpy(2.0, x, acc, 3);
  CHECK(acc[1] == -1);
}

TEST_CASE("scalar rmsprop matches the closed form") {
  const auto &s = kernels::table(kernels::Isa::Scalar);
  double p[1] = {1.0}, v[1] = {0.0};
  const double g[1] = {2.0};
  s.rmsprop(p, v, g, 1, 0.1, 0.99, 1e-5);
  const double vexp = 0.01 * 4.0;
  CHECK(v[0] == doctest::Approx(vexp).epsilon(1e-15));
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 2.0 / (std::sqrt(vexp) + 1e-5)).epsilon(1e-15));
}

TEST_CASE("every available SIMD variant is equivalent to the scalar reference") {
  using kernels::Isa;
  const auto &ref = kernels::table(Isa::Scalar);
  for (Isa isa : {Isa::Avx2}) {
    if (!kernels::available(isa)) {
      MESSAGE("variant " << kernels::isa_name(isa) << " unavailable on this machine; skipped");
      continue;
    }
    const auto &simd = kernels::table(isa);
    ma2c::Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t rows = 1 + rng.below(70), cols = rng.below(90) + 1;
      const auto w = random_vector(rng, rows * cols);
      const auto x = random_vector(rng, cols);
      const auto b = random_vector(rng, rows);
      const auto dy = random_vector(rng, rows);
      std::vector<double> y1(rows), y2(rows);
      ref.gemv(w.data(), x.data(), b.data(), y1.data(), rows, cols);
      simd.gemv(w.data(), x.data(), b.data(), y2.data(), rows, cols);
      check_close(y2, y1);
      ref.gemv(w.data(), x.data(), nullptr, y1.data(), rows, cols);
      simd.gemv(w.data(), x.data(), nullptr, y2.data(), rows, cols);
      check_close(y2, y1);

      auto dx1 = random_vector(rng, cols), dx2 = dx1;
      ref.gemv_t_acc(w.data(), dy.data(), dx1.data(), rows, cols);
      simd.gemv_t_acc(w.data(), dy.data(), dx2.data(), rows, cols);
      check_close(dx2, dx1);

      auto g1 = random_vector(rng, rows * cols), g2 = g1;
      ref.ger(dy.data(), x.data(), g1.data(), rows, cols);
      simd.ger(dy.data(), x.data(), g2.data(), rows, cols);
      check_close(g2, g1);

      const double d1 = ref.dot(w.data(), w.data(), cols), d2 = simd.dot(w.data(), w.data(), cols);
      CHECK(std::abs(d1 - d2) <= 1e-12 * (1.0 + std::abs(d1)));
      const double s1 = ref.sum_squares(w.data(), w.size()), s2 = simd.sum_squares(w.data(), w.size());
      CHECK(std::abs(s1 - s2) <= 1e-12 * s1);

      auto a1 = random_vector(rng, cols), a2 = a1;
      ref.axpy(0.3, x.data(), a1.data(), cols);
      simd.axpy(0.3, x.data(), a2.data(), cols);
      check_close(a2, a1);

      auto p1 = random_vector(rng, cols), p2 = p1;
      std::vector<double> v1(cols, 0.1), v2(cols, 0.1);
      ref.rmsprop(p1.data(), v1.data(), x.data(), cols, 1e-3, 0.99, 1e-5);
      simd.rmsprop(p2.data(), v2.data(), x.data(), cols, 1e-3, 0.99, 1e-5);
      check_close(p2, p1);
      check_close(v2, v1);
    }
  }
}

TEST_CASE("active variant can be switched and span wrappers check shapes") {
  const auto original = kernels::active_isa();
  kernels::set_active(kernels::Isa::Scalar);
  CHECK(kernels::active_isa() == kernels::Isa::Scalar);
  std::vector<double> w(6, 1.0), x(3, 1.0), y(2);
  kernels::gemv(w, x, {}, y);
  CHECK(y[0] == 3.0);
  std::vector<double> bad(4);
  CHECK_THROWS_AS(kernels::gemv(w, bad, {}, y), ma2c::ContractError);
  kernels::set_active(original);
}
