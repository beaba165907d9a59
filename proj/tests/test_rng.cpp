#include <doctest.h>

#include <cmath>

#include "ma2c/error.hpp"
#include "ma2c/rng.hpp"

using ma2c::Rng;

TEST_CASE("rng streams are reproducible and restorable") {
  Rng a(42), b(42);
  for (int k = 0; k < 100; ++k) CHECK(a.next_u64() == b.next_u64());
  const std::string saved = a.save();
  const double u = a.uniform();
  Rng c;
  c.restore(saved);
  CHECK(c.uniform() == u);
  CHECK(c == a);
}

TEST_CASE("uniform draws lie in [0, 1) and below() in range") {
  Rng r(7);
  double sum = 0.0;
  for (int k = 0; k < 20000; ++k) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    REQUIRE(r.below(5) < 5);
  }
  CHECK(sum / 20000.0 == doctest::Approx(0.5).epsilon(0.02));
  CHECK_THROWS_AS(r.below(0), ma2c::ContractError);
}

TEST_CASE("normal draws have unit variance") {
  Rng r(3);
  double s1 = 0.0, s2 = 0.0;
  const int n = 50000;
  for (int k = 0; k < n; ++k) {
    const double x = r.normal();
    s1 += x;
    s2 += x * x;
  }
  CHECK(std::abs(s1 / n) < 0.03);
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("derived seeds separate streams") {
  CHECK(ma2c::derive_seed(1, 0) != ma2c::derive_seed(1, 1));
  CHECK(ma2c::derive_seed(1, 0) != ma2c::derive_seed(2, 0));
  CHECK(ma2c::derive_seed(5, 9) == ma2c::derive_seed(5, 9));
}

TEST_CASE("corrupt rng state is rejected") {
  Rng r;
  CHECK_THROWS_AS(r.restore("not a state"), ma2c::ConfigError);
}
