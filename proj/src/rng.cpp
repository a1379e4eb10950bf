#include "cpcfg/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cpcfg {

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 == 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

int64_t Rng::below(int64_t n) {
  if (n <= 0) throw std::runtime_error("Rng::below: n must be positive");
  // Rejection sampling to avoid modulo bias.
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<int64_t>(x % un);
}

TensorPtr xavier_uniform(const Shape& shape, Rng& rng, bool requires_grad) {
  if (shape.empty()) throw std::runtime_error("xavier_uniform: shape needs >= 1 dimension");
  int64_t numel = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw std::runtime_error("xavier_uniform: zero-sized dimension");
    numel *= d;
  }
  const int64_t fan_in = shape.back();
  const int64_t fan_out = shape.size() == 1 ? shape[0] : numel / fan_in;
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  auto t = Tensor::zeros(shape, requires_grad);
  for (auto& v : t->data) v = rng.uniform(-a, a);
  return t;
}

TensorPtr normal_tensor(const Shape& shape, Rng& rng, bool requires_grad) {
  auto t = Tensor::zeros(shape, requires_grad);
  for (auto& v : t->data) v = rng.normal();
  return t;
}

}  // namespace cpcfg
