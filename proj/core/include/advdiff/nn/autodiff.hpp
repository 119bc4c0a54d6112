#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation applied to Var handles. Calling
// Tape::backward on a 1x1 result walks the record in reverse and
// accumulates gradients into the Parameters that were bound to the tape.
// Rows are batch samples everywhere in this module.

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace advdiff::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Trainable matrix plus its gradient accumulator.
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Matrix v);

  void zero_grad();

  std::string name;
  Matrix value;
  Matrix grad;
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward =
      std::function<void(Tape&, const Matrix& out_value, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf without gradient.
  Var constant(Matrix value);
  /// Leaf whose gradient is kept on the tape (readable through grad()).
  Var input(Matrix value);
  /// Leaf bound to a parameter; backward() adds into p.grad.
  Var parameter(Parameter& p);
  /// Same value as parameter(p) but treated as a constant.
  Var frozen(const Parameter& p) { return constant(p.value); }

  /// Reverse sweep from a 1x1 loss. Throws ShapeError for non-scalar loss.
  void backward(const Var& loss);

  /// Gradient of v after backward(); zero matrix if none reached it.
  Matrix grad(const Var& v) const;

  void clear();
  std::size_t size() const { return nodes_.size(); }

  // Used by operation implementations.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  void accumulate(const Var& v, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

// Arithmetic. Binary elementwise operations broadcast the second operand
// when it is 1x1, a column (rows x 1) or a row (1 x cols).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var min(const Var& a, const Var& b);

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);

Var relu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var atanh(const Var& a);
Var softplus(const Var& a);
/// Elementwise clamp; gradient is zero where the bound is active.
Var clamp(const Var& a, double lo, double hi);

Var sum(const Var& a);
Var mean(const Var& a);
/// Per-row sum, rows x 1.
Var row_sum(const Var& a);

Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count);
Var concat_cols(const Var& a, const Var& b);
/// Rows offset, offset+stride, offset+2*stride, ...
Var take_rows(const Var& a, Eigen::Index offset, Eigen::Index stride);

/// Row-wise layer normalization with 1 x D gain and shift.
Var layer_norm(const Var& x, const Var& gain, const Var& shift, double eps = 1e-5);

/// Multi-head scaled dot-product self-attention over groups of `tokens`
/// consecutive rows. q, k, v are (groups*tokens) x D with D divisible by
/// heads. When scores is non-null it receives the softmax matrices stacked
/// as rows ((group*heads + head)*tokens + i) x tokens.
Var multi_head_attention(const Var& q, const Var& k, const Var& v, Eigen::Index tokens,
                         Eigen::Index heads, Matrix* scores = nullptr);

bool all_finite(const Matrix& m);

}  // namespace advdiff::nn
