#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace ma2c {

/// Portable random source. The standard distributions are implementation
/// defined, so uniform and normal draws are derived from raw mt19937_64 bits
/// here to keep every stream identical across standard libraries.
class Rng {
public:
  Rng() : engine_(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (no cached second draw, so the state is
  /// fully described by the engine).
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  std::string save() const;
  void restore(const std::string &state);

  friend bool operator==(const Rng &a, const Rng &b) { return a.engine_ == b.engine_; }

private:
  std::mt19937_64 engine_;
};

/// Derive an independent stream seed from a base seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

} // namespace ma2c
