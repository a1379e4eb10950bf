#include "cpcfg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace cpcfg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

[[noreturn]] void shape_fail(const char* primitive, const Shape& lhs, const Shape& rhs) {
  throw ShapeError(primitive, lhs, rhs);
}

void require_matrix(const char* primitive, const TensorPtr& x) {
  if (x->ndim() != 2) shape_fail(primitive, x->shape, {});
}

void require_vector(const char* primitive, const TensorPtr& x) {
  if (x->ndim() != 1) shape_fail(primitive, x->shape, {});
}

bool wants_grad(const Tape& tape, std::initializer_list<const TensorPtr*> inputs) {
  if (!tape.enabled()) return false;
  for (const TensorPtr* t : inputs)
    if ((*t)->requires_grad) return true;
  return false;
}

TensorPtr make_out(Shape shape, bool requires_grad) {
  auto t = Tensor::zeros(std::move(shape));
  t->requires_grad = requires_grad;
  return t;
}

// Accumulates src into dst->grad, allocating on first touch. No-op when the
// output never received a gradient (out->grad empty).
void accum(const TensorPtr& t, int64_t i, double g) {
  t->grad[static_cast<size_t>(i)] += g;
}

bool skip_backward(const TensorPtr& out) { return out->grad.empty(); }

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

ShapeError::ShapeError(std::string primitive_, Shape lhs_, Shape rhs_)
    : std::runtime_error("shape mismatch in " + primitive_ + ": " + shape_str(lhs_) + " vs " +
                         shape_str(rhs_)),
      primitive(std::move(primitive_)),
      lhs(std::move(lhs_)),
      rhs(std::move(rhs_)) {}

TensorPtr Tensor::zeros(Shape shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data.assign(static_cast<size_t>(shape_numel(t->shape)), 0.0);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::full(Shape shape, double value, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

TensorPtr Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  if (static_cast<int64_t>(values.size()) != shape_numel(t->shape))
    shape_fail("Tensor::from", t->shape, {static_cast<int64_t>(values.size())});
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

TensorPtr Tensor::vector(std::vector<double> values, bool requires_grad) {
  auto n = static_cast<int64_t>(values.size());
  return from({n}, std::move(values), requires_grad);
}

double Tensor::value() const {
  if (numel() != 1) throw std::runtime_error("Tensor::value: tensor is not scalar");
  return data[0];
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

void Tape::record(const char* name, std::function<void()> backward) {
  ops_.push_back({name, std::move(backward)});
}

void Tape::backward(const TensorPtr& loss) {
  if (consumed_) throw std::runtime_error("Tape::backward: tape already consumed");
  if (loss->numel() != 1) throw std::runtime_error("Tape::backward: loss is not scalar");
  consumed_ = true;
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
}

namespace op {

namespace {

// logsumexp of a strided slice; returns -inf when every input is -inf.
double lse_span(const double* x, int64_t n, int64_t stride) {
  double m = kNegInf;
  for (int64_t i = 0; i < n; ++i) m = std::max(m, x[i * stride]);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += std::exp(x[i * stride] - m);
  return m + std::log(s);
}

TensorPtr elementwise_binary(Tape& tape, const char* name, const TensorPtr& a, const TensorPtr& b,
                             double (*fwd)(double, double),
                             void (*bwd)(double, double, double, double&, double&)) {
  if (a->shape != b->shape) shape_fail(name, a->shape, b->shape);
  auto out = make_out(a->shape, wants_grad(tape, {&a, &b}));
  for (int64_t i = 0; i < a->numel(); ++i) out->data[i] = fwd(a->data[i], b->data[i]);
  if (out->requires_grad)
    tape.record(name, [a, b, out, bwd] {
      if (skip_backward(out)) return;
      a->ensure_grad();
      b->ensure_grad();
      for (int64_t i = 0; i < out->numel(); ++i) {
        double da = 0, db = 0;
        bwd(a->data[i], b->data[i], out->grad[i], da, db);
        accum(a, i, da);
        accum(b, i, db);
      }
    });
  return out;
}

TensorPtr elementwise_unary(Tape& tape, const char* name, const TensorPtr& x,
                            const std::function<double(double)>& fwd,
                            const std::function<double(double, double)>& dfdx_from_x_y) {
  auto out = make_out(x->shape, wants_grad(tape, {&x}));
  for (int64_t i = 0; i < x->numel(); ++i) out->data[i] = fwd(x->data[i]);
  if (out->requires_grad)
    tape.record(name, [x, out, dfdx_from_x_y] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      for (int64_t i = 0; i < out->numel(); ++i)
        accum(x, i, out->grad[i] * dfdx_from_x_y(x->data[i], out->data[i]));
    });
  return out;
}

}  // namespace

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  return elementwise_binary(
      tape, "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  return elementwise_binary(
      tape, "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  return elementwise_binary(
      tape, "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

TensorPtr scale(Tape& tape, const TensorPtr& x, double c) {
  return elementwise_unary(
      tape, "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

TensorPtr add_const(Tape& tape, const TensorPtr& x, double c) {
  return elementwise_unary(
      tape, "add_const", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

TensorPtr clamp(Tape& tape, const TensorPtr& x, double lo, double hi) {
  return elementwise_unary(
      tape, "clamp", x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

TensorPtr relu(Tape& tape, const TensorPtr& x) {
  return elementwise_unary(
      tape, "relu", x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

TensorPtr sigmoid(Tape& tape, const TensorPtr& x) {
  return elementwise_unary(
      tape, "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

TensorPtr tanh(Tape& tape, const TensorPtr& x) {
  return elementwise_unary(
      tape, "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

TensorPtr exp(Tape& tape, const TensorPtr& x) {
  return elementwise_unary(
      tape, "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

TensorPtr log(Tape& tape, const TensorPtr& x) {
  return elementwise_unary(
      tape, "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a->dim(1) != b->dim(0)) shape_fail("matmul", a->shape, b->shape);
  const int64_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
  auto out = make_out({m, n}, wants_grad(tape, {&a, &b}));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = a->data[i * k + kk];
      if (av == 0.0) continue;
      for (int64_t j = 0; j < n; ++j) out->data[i * n + j] += av * b->data[kk * n + j];
    }
  if (out->requires_grad)
    tape.record("matmul", [a, b, out, m, k, n] {
      if (skip_backward(out)) return;
      a->ensure_grad();
      b->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          const double g = out->grad[i * n + j];
          if (g == 0.0) continue;
          for (int64_t kk = 0; kk < k; ++kk) {
            a->grad[i * k + kk] += g * b->data[kk * n + j];
            b->grad[kk * n + j] += g * a->data[i * k + kk];
          }
        }
    });
  return out;
}

TensorPtr linear(Tape& tape, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  require_matrix("linear", x);
  require_matrix("linear", w);
  require_vector("linear", b);
  if (x->dim(1) != w->dim(1) || b->dim(0) != w->dim(0)) shape_fail("linear", x->shape, w->shape);
  const int64_t m = x->dim(0), in = x->dim(1), outw = w->dim(0);
  auto out = make_out({m, outw}, wants_grad(tape, {&x, &w, &b}));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t o = 0; o < outw; ++o) {
      double acc = b->data[o];
      const double* xr = x->data.data() + i * in;
      const double* wr = w->data.data() + o * in;
      for (int64_t c = 0; c < in; ++c) acc += xr[c] * wr[c];
      out->data[i * outw + o] = acc;
    }
  if (out->requires_grad)
    tape.record("linear", [x, w, b, out, m, in, outw] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      w->ensure_grad();
      b->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t o = 0; o < outw; ++o) {
          const double g = out->grad[i * outw + o];
          if (g == 0.0) continue;
          b->grad[o] += g;
          for (int64_t c = 0; c < in; ++c) {
            x->grad[i * in + c] += g * w->data[o * in + c];
            w->grad[o * in + c] += g * x->data[i * in + c];
          }
        }
    });
  return out;
}

TensorPtr linear_vec(Tape& tape, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  require_vector("linear_vec", x);
  require_matrix("linear_vec", w);
  require_vector("linear_vec", b);
  if (x->dim(0) != w->dim(1) || b->dim(0) != w->dim(0))
    shape_fail("linear_vec", x->shape, w->shape);
  const int64_t in = x->dim(0), outw = w->dim(0);
  auto out = make_out({outw}, wants_grad(tape, {&x, &w, &b}));
  for (int64_t o = 0; o < outw; ++o) {
    double acc = b->data[o];
    const double* wr = w->data.data() + o * in;
    for (int64_t c = 0; c < in; ++c) acc += x->data[c] * wr[c];
    out->data[o] = acc;
  }
  if (out->requires_grad)
    tape.record("linear_vec", [x, w, b, out, in, outw] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      w->ensure_grad();
      b->ensure_grad();
      for (int64_t o = 0; o < outw; ++o) {
        const double g = out->grad[o];
        if (g == 0.0) continue;
        b->grad[o] += g;
        for (int64_t c = 0; c < in; ++c) {
          x->grad[c] += g * w->data[o * in + c];
          w->grad[o * in + c] += g * x->data[c];
        }
      }
    });
  return out;
}

TensorPtr log_matvec(Tape& tape, const TensorPtr& m, const TensorPtr& v) {
  require_matrix("log_matvec", m);
  require_vector("log_matvec", v);
  if (m->dim(1) != v->dim(0)) shape_fail("log_matvec", m->shape, v->shape);
  const int64_t rows = m->dim(0), n = m->dim(1);
  auto out = make_out({rows}, wants_grad(tape, {&m, &v}));
  std::vector<double> buf(static_cast<size_t>(n));
  for (int64_t r = 0; r < rows; ++r) {
    const double* mr = m->data.data() + r * n;
    for (int64_t c = 0; c < n; ++c) buf[c] = mr[c] + v->data[c];
    out->data[r] = lse_span(buf.data(), n, 1);
  }
  if (out->requires_grad)
    tape.record("log_matvec", [m, v, out, rows, n] {
      if (skip_backward(out)) return;
      m->ensure_grad();
      v->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double g = out->grad[r];
        if (g == 0.0 || out->data[r] == kNegInf) continue;
        const double* mr = m->data.data() + r * n;
        for (int64_t c = 0; c < n; ++c) {
          const double w = std::exp(mr[c] + v->data[c] - out->data[r]);
          if (w == 0.0) continue;
          m->grad[r * n + c] += g * w;
          v->grad[c] += g * w;
        }
      }
    });
  return out;
}

TensorPtr add_row_vector(Tape& tape, const TensorPtr& x, const TensorPtr& v) {
  require_matrix("add_row_vector", x);
  require_vector("add_row_vector", v);
  if (x->dim(1) != v->dim(0)) shape_fail("add_row_vector", x->shape, v->shape);
  const int64_t m = x->dim(0), n = x->dim(1);
  auto out = make_out(x->shape, wants_grad(tape, {&x, &v}));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out->data[i * n + j] = x->data[i * n + j] + v->data[j];
  if (out->requires_grad)
    tape.record("add_row_vector", [x, v, out, m, n] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      v->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          const double g = out->grad[i * n + j];
          x->grad[i * n + j] += g;
          v->grad[j] += g;
        }
    });
  return out;
}

TensorPtr outer_add(Tape& tape, const TensorPtr& u, const TensorPtr& v) {
  require_vector("outer_add", u);
  require_vector("outer_add", v);
  const int64_t m = u->dim(0), n = v->dim(0);
  auto out = make_out({m, n}, wants_grad(tape, {&u, &v}));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out->data[i * n + j] = u->data[i] + v->data[j];
  if (out->requires_grad)
    tape.record("outer_add", [u, v, out, m, n] {
      if (skip_backward(out)) return;
      u->ensure_grad();
      v->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          const double g = out->grad[i * n + j];
          u->grad[i] += g;
          v->grad[j] += g;
        }
    });
  return out;
}

TensorPtr repeat_row(Tape& tape, const TensorPtr& v, int64_t rows) {
  require_vector("repeat_row", v);
  const int64_t n = v->dim(0);
  auto out = make_out({rows, n}, wants_grad(tape, {&v}));
  for (int64_t i = 0; i < rows; ++i)
    std::copy(v->data.begin(), v->data.end(), out->data.begin() + i * n);
  if (out->requires_grad)
    tape.record("repeat_row", [v, out, rows, n] {
      if (skip_backward(out)) return;
      v->ensure_grad();
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < n; ++j) v->grad[j] += out->grad[i * n + j];
    });
  return out;
}

TensorPtr reshape(Tape& tape, const TensorPtr& x, Shape shape) {
  if (shape_numel(shape) != x->numel()) shape_fail("reshape", x->shape, shape);
  auto out = make_out(std::move(shape), wants_grad(tape, {&x}));
  out->data = x->data;
  if (out->requires_grad)
    tape.record("reshape", [x, out] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      for (int64_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[i];
    });
  return out;
}

TensorPtr concat_vec(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  require_vector("concat_vec", a);
  require_vector("concat_vec", b);
  const int64_t m = a->dim(0), n = b->dim(0);
  auto out = make_out({m + n}, wants_grad(tape, {&a, &b}));
  std::copy(a->data.begin(), a->data.end(), out->data.begin());
  std::copy(b->data.begin(), b->data.end(), out->data.begin() + m);
  if (out->requires_grad)
    tape.record("concat_vec", [a, b, out, m, n] {
      if (skip_backward(out)) return;
      a->ensure_grad();
      b->ensure_grad();
      for (int64_t i = 0; i < m; ++i) a->grad[i] += out->grad[i];
      for (int64_t i = 0; i < n; ++i) b->grad[i] += out->grad[m + i];
    });
  return out;
}

TensorPtr concat_rows(Tape& tape, const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_rows: no parts");
  int64_t cols = parts[0]->ndim() == 1 ? parts[0]->dim(0) : parts[0]->dim(1);
  int64_t rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p->ndim() == 1) {
      if (p->dim(0) != cols) shape_fail("concat_rows", p->shape, {cols});
      rows += 1;
    } else if (p->ndim() == 2) {
      if (p->dim(1) != cols) shape_fail("concat_rows", p->shape, {rows, cols});
      rows += p->dim(0);
    } else {
      shape_fail("concat_rows", p->shape, {});
    }
    rg = rg || p->requires_grad;
  }
  auto out = make_out({rows, cols}, tape.enabled() && rg);
  int64_t at = 0;
  for (const auto& p : parts) {
    std::copy(p->data.begin(), p->data.end(), out->data.begin() + at);
    at += p->numel();
  }
  if (out->requires_grad)
    tape.record("concat_rows", [parts, out] {
      if (skip_backward(out)) return;
      int64_t at = 0;
      for (const auto& p : parts) {
        p->ensure_grad();
        for (int64_t i = 0; i < p->numel(); ++i) p->grad[i] += out->grad[at + i];
        at += p->numel();
      }
    });
  return out;
}

TensorPtr concat_cols(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  require_matrix("concat_cols", a);
  require_matrix("concat_cols", b);
  if (a->dim(0) != b->dim(0)) shape_fail("concat_cols", a->shape, b->shape);
  const int64_t m = a->dim(0), p = a->dim(1), q = b->dim(1);
  auto out = make_out({m, p + q}, wants_grad(tape, {&a, &b}));
  for (int64_t i = 0; i < m; ++i) {
    std::copy(a->data.begin() + i * p, a->data.begin() + (i + 1) * p,
              out->data.begin() + i * (p + q));
    std::copy(b->data.begin() + i * q, b->data.begin() + (i + 1) * q,
              out->data.begin() + i * (p + q) + p);
  }
  if (out->requires_grad)
    tape.record("concat_cols", [a, b, out, m, p, q] {
      if (skip_backward(out)) return;
      a->ensure_grad();
      b->ensure_grad();
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < p; ++j) a->grad[i * p + j] += out->grad[i * (p + q) + j];
        for (int64_t j = 0; j < q; ++j) b->grad[i * q + j] += out->grad[i * (p + q) + p + j];
      }
    });
  return out;
}

TensorPtr slice_vec(Tape& tape, const TensorPtr& x, int64_t start, int64_t len) {
  require_vector("slice_vec", x);
  if (start < 0 || len < 0 || start + len > x->dim(0)) shape_fail("slice_vec", x->shape, {start, len});
  auto out = make_out({len}, wants_grad(tape, {&x}));
  std::copy(x->data.begin() + start, x->data.begin() + start + len, out->data.begin());
  if (out->requires_grad)
    tape.record("slice_vec", [x, out, start, len] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      for (int64_t i = 0; i < len; ++i) x->grad[start + i] += out->grad[i];
    });
  return out;
}

TensorPtr row(Tape& tape, const TensorPtr& x, int64_t i) {
  require_matrix("row", x);
  if (i < 0 || i >= x->dim(0)) shape_fail("row", x->shape, {i});
  const int64_t n = x->dim(1);
  auto out = make_out({n}, wants_grad(tape, {&x}));
  std::copy(x->data.begin() + i * n, x->data.begin() + (i + 1) * n, out->data.begin());
  if (out->requires_grad)
    tape.record("row", [x, out, i, n] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      for (int64_t j = 0; j < n; ++j) x->grad[i * n + j] += out->grad[j];
    });
  return out;
}

TensorPtr col(Tape& tape, const TensorPtr& x, int64_t j) {
  require_matrix("col", x);
  if (j < 0 || j >= x->dim(1)) shape_fail("col", x->shape, {j});
  const int64_t m = x->dim(0), n = x->dim(1);
  auto out = make_out({m}, wants_grad(tape, {&x}));
  for (int64_t i = 0; i < m; ++i) out->data[i] = x->data[i * n + j];
  if (out->requires_grad)
    tape.record("col", [x, out, j, m, n] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      for (int64_t i = 0; i < m; ++i) x->grad[i * n + j] += out->grad[i];
    });
  return out;
}

TensorPtr gather_rows(Tape& tape, const TensorPtr& x, const std::vector<int64_t>& ids) {
  require_matrix("gather_rows", x);
  const int64_t n = x->dim(1);
  for (int64_t id : ids)
    if (id < 0 || id >= x->dim(0)) shape_fail("gather_rows", x->shape, {id});
  auto out = make_out({static_cast<int64_t>(ids.size()), n}, wants_grad(tape, {&x}));
  for (size_t r = 0; r < ids.size(); ++r)
    std::copy(x->data.begin() + ids[r] * n, x->data.begin() + (ids[r] + 1) * n,
              out->data.begin() + static_cast<int64_t>(r) * n);
  if (out->requires_grad)
    tape.record("gather_rows", [x, out, ids, n] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      for (size_t r = 0; r < ids.size(); ++r)
        for (int64_t j = 0; j < n; ++j)
          x->grad[ids[r] * n + j] += out->grad[static_cast<int64_t>(r) * n + j];
    });
  return out;
}

TensorPtr embed_segment(Tape& tape, const TensorPtr& x, int64_t offset, int64_t total,
                        double fill) {
  require_vector("embed_segment", x);
  const int64_t len = x->dim(0);
  if (offset < 0 || offset + len > total) shape_fail("embed_segment", x->shape, {offset, total});
  auto out = make_out({total}, wants_grad(tape, {&x}));
  std::fill(out->data.begin(), out->data.end(), fill);
  std::copy(x->data.begin(), x->data.end(), out->data.begin() + offset);
  if (out->requires_grad)
    tape.record("embed_segment", [x, out, offset, len] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      for (int64_t i = 0; i < len; ++i) x->grad[i] += out->grad[offset + i];
    });
  return out;
}

TensorPtr logsumexp(Tape& tape, const TensorPtr& x, int axis) {
  require_matrix("logsumexp", x);
  if (axis != 0 && axis != 1) shape_fail("logsumexp", x->shape, {axis});
  const int64_t m = x->dim(0), n = x->dim(1);
  const int64_t out_len = axis == 0 ? n : m;
  auto out = make_out({out_len}, wants_grad(tape, {&x}));
  if (axis == 0) {
    for (int64_t j = 0; j < n; ++j) out->data[j] = lse_span(x->data.data() + j, m, n);
  } else {
    for (int64_t i = 0; i < m; ++i) out->data[i] = lse_span(x->data.data() + i * n, n, 1);
  }
  if (out->requires_grad)
    tape.record("logsumexp", [x, out, axis, m, n] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      const int64_t out_len = axis == 0 ? n : m;
      for (int64_t r = 0; r < out_len; ++r) {
        const double g = out->grad[r];
        if (g == 0.0 || out->data[r] == kNegInf) continue;
        const int64_t count = axis == 0 ? m : n;
        const int64_t base = axis == 0 ? r : r * n;
        const int64_t stride = axis == 0 ? n : 1;
        for (int64_t i = 0; i < count; ++i) {
          const double w = std::exp(x->data[base + i * stride] - out->data[r]);
          if (w != 0.0) x->grad[base + i * stride] += g * w;
        }
      }
    });
  return out;
}

TensorPtr logsumexp_vec(Tape& tape, const TensorPtr& x) {
  require_vector("logsumexp_vec", x);
  const int64_t n = x->dim(0);
  auto out = make_out(Shape{}, wants_grad(tape, {&x}));
  out->data[0] = lse_span(x->data.data(), n, 1);
  if (out->requires_grad)
    tape.record("logsumexp_vec", [x, out, n] {
      if (skip_backward(out)) return;
      if (out->data[0] == kNegInf) return;
      x->ensure_grad();
      const double g = out->grad[0];
      for (int64_t i = 0; i < n; ++i) x->grad[i] += g * std::exp(x->data[i] - out->data[0]);
    });
  return out;
}

TensorPtr log_softmax(Tape& tape, const TensorPtr& x) {
  if (x->ndim() != 1 && x->ndim() != 2) shape_fail("log_softmax", x->shape, {});
  const int64_t n = x->ndim() == 1 ? x->dim(0) : x->dim(1);
  const int64_t m = x->ndim() == 1 ? 1 : x->dim(0);
  auto out = make_out(x->shape, wants_grad(tape, {&x}));
  for (int64_t i = 0; i < m; ++i) {
    const double lse = lse_span(x->data.data() + i * n, n, 1);
    for (int64_t j = 0; j < n; ++j) out->data[i * n + j] = x->data[i * n + j] - lse;
  }
  if (out->requires_grad)
    tape.record("log_softmax", [x, out, m, n] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      for (int64_t i = 0; i < m; ++i) {
        double gsum = 0.0;
        for (int64_t j = 0; j < n; ++j) gsum += out->grad[i * n + j];
        for (int64_t j = 0; j < n; ++j) {
          const double p = std::exp(out->data[i * n + j]);
          x->grad[i * n + j] += out->grad[i * n + j] - p * gsum;
        }
      }
    });
  return out;
}

TensorPtr max_over_rows(Tape& tape, const TensorPtr& x) {
  require_matrix("max_over_rows", x);
  const int64_t m = x->dim(0), n = x->dim(1);
  if (m == 0) shape_fail("max_over_rows", x->shape, {});
  auto out = make_out({n}, wants_grad(tape, {&x}));
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n), 0);
  for (int64_t j = 0; j < n; ++j) {
    double best = x->data[j];
    int64_t best_i = 0;
    for (int64_t i = 1; i < m; ++i)
      if (x->data[i * n + j] > best) {
        best = x->data[i * n + j];
        best_i = i;
      }
    out->data[j] = best;
    (*argmax)[j] = best_i;
  }
  if (out->requires_grad)
    tape.record("max_over_rows", [x, out, argmax, n] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      for (int64_t j = 0; j < n; ++j) x->grad[(*argmax)[j] * n + j] += out->grad[j];
    });
  return out;
}

TensorPtr sum(Tape& tape, const TensorPtr& x) {
  auto out = make_out(Shape{}, wants_grad(tape, {&x}));
  out->data[0] = std::accumulate(x->data.begin(), x->data.end(), 0.0);
  if (out->requires_grad)
    tape.record("sum", [x, out] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      for (int64_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[0];
    });
  return out;
}

TensorPtr mean(Tape& tape, const TensorPtr& x) {
  if (x->numel() == 0) throw std::runtime_error("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(x->numel());
  auto out = make_out(Shape{}, wants_grad(tape, {&x}));
  out->data[0] = std::accumulate(x->data.begin(), x->data.end(), 0.0) * inv;
  if (out->requires_grad)
    tape.record("mean", [x, out, inv] {
      if (skip_backward(out)) return;
      x->ensure_grad();
      for (int64_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[0] * inv;
    });
  return out;
}

}  // namespace op

}  // namespace cpcfg
