#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpcfg {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

/// Thrown by primitives when operand shapes do not conform. Carries the
/// offending primitive name and both shapes for programmatic inspection.
class ShapeError : public std::runtime_error {
 public:
  ShapeError(std::string primitive, Shape lhs, Shape rhs);
  std::string primitive;
  Shape lhs, rhs;
};

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major tensor of doubles. Data is immutable after construction
/// except through the optimizer; the gradient buffer is allocated lazily and
/// always mirrors the data shape.
class Tensor {
 public:
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until ensure_grad()
  bool requires_grad = false;

  static TensorPtr zeros(Shape shape, bool requires_grad = false);
  static TensorPtr full(Shape shape, double value, bool requires_grad = false);
  static TensorPtr from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static TensorPtr scalar(double value, bool requires_grad = false);
  static TensorPtr vector(std::vector<double> values, bool requires_grad = false);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  bool is_scalar() const { return numel() == 1 && shape.empty(); }

  /// Value of a scalar tensor.
  double value() const;

  void ensure_grad();
  void zero_grad();
  bool all_finite() const;
};

/// Ordered record of primitive applications. Recording order is a valid
/// topological order of the computation, so backward() replays it in exact
/// reverse. One tape per worker; a tape can be consumed by backward() once.
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}

  bool enabled() const { return enabled_; }
  bool consumed() const { return consumed_; }
  size_t size() const { return ops_.size(); }

  void record(const char* name, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and replays the tape backward, accumulating
  /// gradients into every reachable tensor with requires_grad.
  void backward(const TensorPtr& loss);

 private:
  struct Op {
    const char* name;
    std::function<void()> backward;
  };
  std::vector<Op> ops_;
  bool enabled_ = true;
  bool consumed_ = false;
};

namespace op {

// Elementwise, shapes must match exactly.
TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);

// Elementwise with a constant.
TensorPtr scale(Tape& tape, const TensorPtr& x, double c);
TensorPtr add_const(Tape& tape, const TensorPtr& x, double c);
TensorPtr clamp(Tape& tape, const TensorPtr& x, double lo, double hi);

// Elementwise nonlinearities.
TensorPtr relu(Tape& tape, const TensorPtr& x);
TensorPtr sigmoid(Tape& tape, const TensorPtr& x);
TensorPtr tanh(Tape& tape, const TensorPtr& x);
TensorPtr exp(Tape& tape, const TensorPtr& x);
TensorPtr log(Tape& tape, const TensorPtr& x);

// Linear algebra.
TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b);        // [m,k]x[k,n] -> [m,n]
TensorPtr linear(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                 const TensorPtr& b);                                        // [m,in]x[out,in]+[out] -> [m,out]
TensorPtr linear_vec(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                     const TensorPtr& b);                                    // [in]x[out,in]+[out] -> [out]
/// Log-semiring matrix-vector product: out[r] = logsumexp_c(m[r,c] + v[c]).
TensorPtr log_matvec(Tape& tape, const TensorPtr& m, const TensorPtr& v);    // [m,n]x[n] -> [m]

// Broadcasts.
TensorPtr add_row_vector(Tape& tape, const TensorPtr& x, const TensorPtr& v);  // [m,n]+[n] -> [m,n]
TensorPtr outer_add(Tape& tape, const TensorPtr& u, const TensorPtr& v);       // [m]+[n] -> [m,n]
TensorPtr repeat_row(Tape& tape, const TensorPtr& v, int64_t rows);            // [n] -> [rows,n]

// Shape and selection.
TensorPtr reshape(Tape& tape, const TensorPtr& x, Shape shape);
TensorPtr concat_vec(Tape& tape, const TensorPtr& a, const TensorPtr& b);      // [m],[n] -> [m+n]
TensorPtr concat_rows(Tape& tape, const std::vector<TensorPtr>& parts);        // k x [mi,n] or [n] -> [sum,n]
TensorPtr concat_cols(Tape& tape, const TensorPtr& a, const TensorPtr& b);     // [m,p],[m,q] -> [m,p+q]
TensorPtr slice_vec(Tape& tape, const TensorPtr& x, int64_t start, int64_t len);
TensorPtr row(Tape& tape, const TensorPtr& x, int64_t i);                      // [m,n] -> [n]
TensorPtr col(Tape& tape, const TensorPtr& x, int64_t j);                      // [m,n] -> [m]
TensorPtr gather_rows(Tape& tape, const TensorPtr& x, const std::vector<int64_t>& ids);
/// Places x into a vector of length total at offset; remaining entries fill.
TensorPtr embed_segment(Tape& tape, const TensorPtr& x, int64_t offset, int64_t total, double fill);

// Reductions. axis 0 reduces over rows (per column), axis 1 over columns.
TensorPtr logsumexp(Tape& tape, const TensorPtr& x, int axis);                 // [m,n] -> [n] or [m]
TensorPtr logsumexp_vec(Tape& tape, const TensorPtr& x);                       // [n] -> scalar
TensorPtr log_softmax(Tape& tape, const TensorPtr& x);                         // [m,n] rows, or [n]
TensorPtr max_over_rows(Tape& tape, const TensorPtr& x);                       // [m,n] -> [n]
TensorPtr sum(Tape& tape, const TensorPtr& x);                                 // -> scalar
TensorPtr mean(Tape& tape, const TensorPtr& x);                                // -> scalar

}  // namespace op

}  // namespace cpcfg
