#include "advdiff/nn/autodiff.hpp"

#include <cmath>
#include <utility>

#include "advdiff/error.hpp"

namespace advdiff::nn {

Parameter::Parameter(std::string n, Matrix v)
    : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

void Parameter::zero_grad() { grad.setZero(value.rows(), value.cols()); }

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on a non-1x1 value");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::input(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, true});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, nullptr, &p, true});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw Error("operands recorded on different tapes");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : nullptr, nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols())
    throw ShapeError("gradient shape does not match value shape");
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw Error("loss was recorded on a different tape");
  if (loss.value().size() != 1) throw ShapeError("backward() requires a 1x1 loss");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.value, n.grad);
    if (n.param != nullptr) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols())
        n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::clear() { nodes_.clear(); }

bool all_finite(const Matrix& m) { return m.allFinite(); }

namespace {

enum class Bcast { same, scalar, column, row };

Bcast broadcast_kind(const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::same;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::scalar;
  if (b.rows() == a.rows() && b.cols() == 1) return Bcast::column;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::row;
  throw ShapeError("incompatible operand shapes " + std::to_string(a.rows()) + "x" +
                   std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                   std::to_string(b.cols()));
}

Matrix expand(const Matrix& b, Bcast kind, Eigen::Index rows, Eigen::Index cols) {
  switch (kind) {
    case Bcast::same:
      return b;
    case Bcast::scalar:
      return Matrix::Constant(rows, cols, b(0, 0));
    case Bcast::column:
      return b.replicate(1, cols);
    case Bcast::row:
      return b.replicate(rows, 1);
  }
  return b;
}

Matrix reduce(const Matrix& g, Bcast kind) {
  switch (kind) {
    case Bcast::same:
      return g;
    case Bcast::scalar:
      return Matrix::Constant(1, 1, g.sum());
    case Bcast::column:
      return g.rowwise().sum();
    case Bcast::row:
      return g.colwise().sum();
  }
  return g;
}

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx_times_grad) {
  Matrix out = a.value().unaryExpr(f);
  return a.tape()->record(std::move(out), {a},
                          [a, dfdx_times_grad](Tape& t, const Matrix& y, const Matrix& g) {
                            t.accumulate(a, dfdx_times_grad(a.value(), y, g));
                          });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  const Bcast k = broadcast_kind(a.value(), b.value());
  Matrix out = a.value() + expand(b.value(), k, a.rows(), a.cols());
  return a.tape()->record(std::move(out), {a, b}, [a, b, k](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b.id())) t.accumulate(b, reduce(g, k));
  });
}

Var sub(const Var& a, const Var& b) {
  const Bcast k = broadcast_kind(a.value(), b.value());
  Matrix out = a.value() - expand(b.value(), k, a.rows(), a.cols());
  return a.tape()->record(std::move(out), {a, b}, [a, b, k](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b.id())) t.accumulate(b, -reduce(g, k));
  });
}

Var mul(const Var& a, const Var& b) {
  const Bcast k = broadcast_kind(a.value(), b.value());
  Matrix bx = expand(b.value(), k, a.rows(), a.cols());
  Matrix out = a.value().cwiseProduct(bx);
  return a.tape()->record(std::move(out), {a, b},
                          [a, b, k, bx = std::move(bx)](Tape& t, const Matrix&, const Matrix& g) {
                            if (t.requires_grad(a.id())) t.accumulate(a, g.cwiseProduct(bx));
                            if (t.requires_grad(b.id()))
                              t.accumulate(b, reduce(g.cwiseProduct(a.value()), k));
                          });
}

Var scale(const Var& a, double c) {
  return a.tape()->record(a.value() * c, {a}, [a, c](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g * c);
  });
}

Var add_scalar(const Var& a, double c) {
  Matrix out = a.value().array() + c;
  return a.tape()->record(std::move(out), {a},
                          [a](Tape& t, const Matrix&, const Matrix& g) { t.accumulate(a, g); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var min(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("min: shape mismatch");
  Matrix out = a.value().cwiseMin(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    const auto pick_a = (a.value().array() <= b.value().array());
    if (t.requires_grad(a.id())) t.accumulate(a, pick_a.select(g.array(), 0.0).matrix());
    if (t.requires_grad(b.id())) t.accumulate(b, pick_a.select(0.0, g.array()).matrix());
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix out;
  out.noalias() = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(a.id())) {
      Matrix ga;
      ga.noalias() = g * b.value().transpose();
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b.id())) {
      Matrix gb;
      gb.noalias() = a.value().transpose() * g;
      t.accumulate(b, gb);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(a.id())) {
      Matrix ga;
      ga.noalias() = g * b.value();
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b.id())) {
      Matrix gb;
      gb.noalias() = g.transpose() * a.value();
      t.accumulate(b, gb);
    }
  });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
        return (x.array() > 0.0).select(g.array(), 0.0).matrix();
      });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
        return (g.array() * (1.0 - y.array().square())).matrix();
      });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); },
      [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix { return g.cwiseProduct(y); });
}

Var log(const Var& a) {
  return unary(
      a, [](double x) { return std::log(x); },
      [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
        return g.cwiseQuotient(x);
      });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; },
      [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
        return 2.0 * g.cwiseProduct(x);
      });
}

Var atanh(const Var& a) {
  return unary(
      a, [](double x) { return std::atanh(x); },
      [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
        return (g.array() / (1.0 - x.array().square())).matrix();
      });
}

Var softplus(const Var& a) {
  return unary(
      a,
      [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
        return (g.array() / (1.0 + (-x.array()).exp())).matrix();
      });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
        return (x.array() >= lo && x.array() <= hi).select(g.array(), 0.0).matrix();
      });
}

Var sum(const Var& a) {
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), {a},
                          [a](Tape& t, const Matrix&, const Matrix& g) {
                            t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
                          });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum() / n), {a},
                          [a, n](Tape& t, const Matrix&, const Matrix& g) {
                            t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
                          });
}

Var row_sum(const Var& a) {
  Matrix out = a.value().rowwise().sum();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g.replicate(1, a.cols()));
  });
}

Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw ShapeError("slice_cols out of range");
  Matrix out = a.value().middleCols(begin, count);
  return a.tape()->record(std::move(out), {a},
                          [a, begin, count](Tape& t, const Matrix&, const Matrix& g) {
                            Matrix full = Matrix::Zero(a.rows(), a.cols());
                            full.middleCols(begin, count) = g;
                            t.accumulate(a, full);
                          });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ac = a.cols();
  return a.tape()->record(std::move(out), {a, b}, [a, b, ac](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(a.id())) t.accumulate(a, g.leftCols(ac));
    if (t.requires_grad(b.id())) t.accumulate(b, g.rightCols(g.cols() - ac));
  });
}

Var take_rows(const Var& a, Eigen::Index offset, Eigen::Index stride) {
  if (stride <= 0 || offset < 0 || offset >= stride || a.rows() % stride != 0)
    throw ShapeError("take_rows: bad offset/stride");
  const Eigen::Index n = a.rows() / stride;
  Matrix out(n, a.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = a.value().row(i * stride + offset);
  return a.tape()->record(std::move(out), {a},
                          [a, offset, stride, n](Tape& t, const Matrix&, const Matrix& g) {
                            Matrix full = Matrix::Zero(a.rows(), a.cols());
                            for (Eigen::Index i = 0; i < n; ++i) full.row(i * stride + offset) = g.row(i);
                            t.accumulate(a, full);
                          });
}

Var layer_norm(const Var& x, const Var& gain, const Var& shift, double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (d < 2) throw ShapeError("layer_norm needs at least two features");
  if (gain.rows() != 1 || gain.cols() != d || shift.rows() != 1 || shift.cols() != d)
    throw ShapeError("layer_norm: gain/shift must be 1 x D");
  Matrix xhat(n, d);
  Matrix inv_std(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i, 0) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i, 0);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               shift.value().row(0).array();
  return x.tape()->record(
      std::move(out), {x, gain, shift},
      [x, gain, shift, xhat = std::move(xhat), inv_std = std::move(inv_std), d](
          Tape& t, const Matrix&, const Matrix& g) {
        if (t.requires_grad(gain.id())) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(shift.id())) t.accumulate(shift, g.colwise().sum());
        if (t.requires_grad(x.id())) {
          Matrix gx(g.rows(), d);
          for (Eigen::Index i = 0; i < g.rows(); ++i) {
            const Eigen::ArrayXd gh = (g.row(i).array() * gain.value().row(0).array()).transpose();
            const Eigen::ArrayXd xh = xhat.row(i).array().transpose();
            const double m1 = gh.mean();
            const double m2 = (gh * xh).mean();
            gx.row(i) = (inv_std(i, 0) * (gh - m1 - xh * m2)).transpose();
          }
          t.accumulate(x, gx);
        }
      });
}

Var multi_head_attention(const Var& q, const Var& k, const Var& v, Eigen::Index tokens,
                         Eigen::Index heads, Matrix* scores) {
  const Eigen::Index rows = q.rows();
  const Eigen::Index dim = q.cols();
  if (k.rows() != rows || v.rows() != rows || k.cols() != dim || v.cols() != dim)
    throw ShapeError("attention: Q, K, V shapes differ");
  if (tokens <= 0 || rows % tokens != 0) throw ShapeError("attention: rows not a multiple of tokens");
  if (heads <= 0 || dim % heads != 0) throw ShapeError("attention: D not divisible by heads");
  const Eigen::Index dk = dim / heads;
  if (dk == 0) throw ShapeError("attention: d_k = 0");
  const Eigen::Index groups = rows / tokens;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix probs(groups * heads * tokens, tokens);
  Matrix out(rows, dim);
  for (Eigen::Index gidx = 0; gidx < groups; ++gidx) {
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto qh = q.value().block(gidx * tokens, h * dk, tokens, dk);
      const auto kh = k.value().block(gidx * tokens, h * dk, tokens, dk);
      const auto vh = v.value().block(gidx * tokens, h * dk, tokens, dk);
      Matrix logits = (qh * kh.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < tokens; ++i) {
        const double m = logits.row(i).maxCoeff();
        logits.row(i) = (logits.row(i).array() - m).exp();
        logits.row(i) /= logits.row(i).sum();
      }
      probs.block((gidx * heads + h) * tokens, 0, tokens, tokens) = logits;
      out.block(gidx * tokens, h * dk, tokens, dk).noalias() = logits * vh;
    }
  }
  if (scores != nullptr) *scores = probs;
  return q.tape()->record(
      std::move(out), {q, k, v},
      [q, k, v, tokens, heads, dk, groups, inv_sqrt, probs = std::move(probs)](
          Tape& t, const Matrix&, const Matrix& g) {
        Matrix gq = Matrix::Zero(q.rows(), q.cols());
        Matrix gk = Matrix::Zero(k.rows(), k.cols());
        Matrix gv = Matrix::Zero(v.rows(), v.cols());
        for (Eigen::Index gidx = 0; gidx < groups; ++gidx) {
          for (Eigen::Index h = 0; h < heads; ++h) {
            const auto p = probs.block((gidx * heads + h) * tokens, 0, tokens, tokens);
            const auto qh = q.value().block(gidx * tokens, h * dk, tokens, dk);
            const auto kh = k.value().block(gidx * tokens, h * dk, tokens, dk);
            const auto vh = v.value().block(gidx * tokens, h * dk, tokens, dk);
            const auto go = g.block(gidx * tokens, h * dk, tokens, dk);
            gv.block(gidx * tokens, h * dk, tokens, dk).noalias() = p.transpose() * go;
            Matrix gp = go * vh.transpose();
            Matrix gz(tokens, tokens);
            for (Eigen::Index i = 0; i < tokens; ++i) {
              const double dot = gp.row(i).dot(p.row(i));
              gz.row(i) = p.row(i).array() * (gp.row(i).array() - dot);
            }
            gz *= inv_sqrt;
            gq.block(gidx * tokens, h * dk, tokens, dk).noalias() = gz * kh;
            gk.block(gidx * tokens, h * dk, tokens, dk).noalias() = gz.transpose() * qh;
          }
        }
        t.accumulate(q, gq);
        t.accumulate(k, gk);
        t.accumulate(v, gv);
      });
}

}  // namespace advdiff::nn
