#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "support.hpp"

using namespace cpcfg;
namespace o = op;

TEST_CASE("relu forward") {
  Tape tape(false);
  auto x = Tensor::vector({-1.0, 0.0, 2.0});
  auto y = o::relu(tape, x);
  CHECK(y->data == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("log_softmax of equal scores is uniform") {
  Tape tape(false);
  auto y = o::log_softmax(tape, Tensor::vector({0.0, 0.0}));
  CHECK(y->data[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  CHECK(y->data[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("log_softmax rows renormalize to 0 within 1e-10") {
  Rng rng(7);
  Tape tape(false);
  auto x = Tensor::zeros({5, 9});
  for (auto& v : x->data) v = rng.uniform(-1e6, 1e6);
  auto y = o::log_softmax(tape, x);
  for (int64_t r = 0; r < 5; ++r) {
    std::vector<double> row(y->data.begin() + r * 9, y->data.begin() + (r + 1) * 9);
    CHECK(std::abs(cpcfg::test::lse_reference(row)) < 1e-10);
  }
}

TEST_CASE("logsumexp is overflow-safe") {
  Tape tape(false);
  auto y = o::logsumexp_vec(tape, Tensor::vector({1000.0, 1000.0}));
  CHECK(y->value() == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-14));

  // Magnitudes up to 1e6, checked against an extended-precision shifted sum.
  Rng rng(11);
  std::vector<double> xs(64);
  for (auto& v : xs) v = rng.uniform(-1e6, 1e6);
  auto t = Tensor::vector(xs);
  auto got = o::logsumexp_vec(tape, t)->value();
  CHECK(got == doctest::Approx(cpcfg::test::lse_reference(xs)).epsilon(1e-12));
}

TEST_CASE("logsumexp of all -inf stays -inf without NaN") {
  Tape tape;
  const double ninf = -std::numeric_limits<double>::infinity();
  auto x = Tensor::from({2, 2}, {ninf, 0.0, ninf, 1.0}, true);
  auto col_lse = o::logsumexp(tape, x, 0);
  CHECK(col_lse->data[0] == ninf);
  CHECK(std::isfinite(col_lse->data[1]));
  auto loss = o::sum(tape, o::logsumexp(tape, o::reshape(tape, col_lse, {1, 2}), 1));
  tape.backward(loss);
  for (double g : x->grad) CHECK(std::isfinite(g));
}

TEST_CASE("backward of linear loss gives the data as gradient") {
  Tape tape;
  auto x = Tensor::vector({1.0, 2.0});
  auto w = Tensor::vector({3.0, 4.0}, true);
  auto loss = o::sum(tape, o::mul(tape, x, w));
  tape.backward(loss);
  CHECK(w->grad == std::vector<double>{1.0, 2.0});
}

TEST_CASE("gradient of logsumexp is softmax") {
  Tape tape;
  auto v = Tensor::vector({0.5, -0.25, 1.5}, true);
  auto loss = o::logsumexp_vec(tape, v);
  tape.backward(loss);
  const double lse = loss->value();
  for (int i = 0; i < 3; ++i)
    CHECK(v->grad[i] == doctest::Approx(std::exp(v->data[i] - lse)).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar loss and a fresh tape") {
  Tape tape;
  auto x = Tensor::vector({1.0, 2.0}, true);
  auto y = o::scale(tape, x, 2.0);
  CHECK_THROWS(tape.backward(y));

  Tape tape2;
  auto loss = o::sum(tape2, x);
  tape2.backward(loss);
  CHECK_THROWS(tape2.backward(loss));
}

TEST_CASE("shape errors carry the primitive and both shapes") {
  Tape tape(false);
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({3, 3});
  try {
    o::add(tape, a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.primitive == "add");
    CHECK(e.lhs == Shape{2, 3});
    CHECK(e.rhs == Shape{3, 3});
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
}

TEST_CASE("every primitive passes finite-difference checks") {
  auto results = cpcfg::test::primitive_gradcheck_suite(1e-6);
  CHECK(results.size() >= 30);
  for (const auto& [name, err] : results) {
    INFO(name);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("tape replay is deterministic") {
  auto run = [] {
    Rng rng(99);
    auto w = normal_tensor({4, 4}, rng, true);
    auto x = normal_tensor({4}, rng);
    Tape tape;
    auto loss = o::logsumexp_vec(tape, o::linear_vec(tape, x, w, Tensor::zeros({4})));
    tape.backward(loss);
    return std::make_pair(loss->value(), w->grad);
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("xavier uniform bounds and determinism") {
  Rng rng(5);
  auto t = xavier_uniform({4, 4}, rng);
  const double a = std::sqrt(6.0 / 8.0);
  for (double v : t->data) {
    CHECK(v >= -a);
    CHECK(v <= a);
  }
  Rng rng2(5);
  auto t2 = xavier_uniform({4, 4}, rng2);
  CHECK(t->data == t2->data);

  CHECK_THROWS(xavier_uniform({0, 4}, rng));
}

TEST_CASE("xavier uniform empirical variance matches a^2/3") {
  Rng rng2(1234);
  auto wide = xavier_uniform({1000, 1000}, rng2, false);
  const double bound = std::sqrt(6.0 / 2000.0);
  double mean = 0.0;
  for (double v : wide->data) mean += v;
  mean /= static_cast<double>(wide->numel());
  double var = 0.0;
  for (double v : wide->data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(wide->numel());
  const double expected = bound * bound / 3.0;
  CHECK(std::abs(var - expected) / expected < 0.02);
}

TEST_CASE("rng normal moments") {
  Rng rng(77);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}
