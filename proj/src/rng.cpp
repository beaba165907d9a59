#include "ma2c/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "ma2c/error.hpp"

namespace ma2c {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ContractError("Rng::below called with n = 0");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::save() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore(const std::string &state) {
  std::istringstream is(state);
  is >> engine_;
  if (!is) throw ConfigError("corrupt RNG state in checkpoint");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

} // namespace ma2c
