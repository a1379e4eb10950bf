#pragma once

#include <cstdint>
#include <random>

#include "cpcfg/tensor.hpp"

namespace cpcfg {

/// Seedable generator owned by the caller; no global RNG anywhere. Uniform
/// and normal draws are derived from raw mt19937_64 output rather than
/// std::*_distribution so that streams are bit-identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes two uniforms per pair.
  double normal();

  /// Integer in [0, n).
  int64_t below(int64_t n);

  uint64_t raw() { return engine_(); }

  /// Derives an independent stream for a subtask.
  Rng fork(uint64_t salt) { return Rng(engine_() ^ (salt * 0x9e3779b97f4a7c15ull)); }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Xavier (Glorot) uniform init: entries ~ U[-a, a], a = sqrt(6/(fan_in+fan_out)).
/// For matrices fan_in is the column count and fan_out the row count; for a
/// 1-d shape both fans equal its length. Deterministic for a fixed seed.
TensorPtr xavier_uniform(const Shape& shape, Rng& rng, bool requires_grad = true);

/// Standard-normal-filled tensor.
TensorPtr normal_tensor(const Shape& shape, Rng& rng, bool requires_grad = false);

}  // namespace cpcfg
