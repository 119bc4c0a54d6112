#include "advdiff/nn/layers.hpp"

#include <cmath>
#include <utility>

#include "advdiff/error.hpp"

namespace advdiff::nn {

namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

Dense::Dense(std::string name, Eigen::Index in, Eigen::Index out, Activation act, Rng& rng)
    : act_(act) {
  if (in <= 0 || out <= 0) throw ShapeError("Dense: dimensions must be positive");
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  weight_ = Parameter(name + ".weight", uniform_matrix(out, in, bound, rng));
  bias_ = Parameter(name + ".bias", uniform_matrix(1, out, bound, rng));
}

Dense::Dense(std::string name, Matrix weight, Matrix bias, Activation act) : act_(act) {
  if (bias.rows() != 1 || bias.cols() != weight.rows())
    throw ShapeError("Dense: bias must be 1 x out");
  weight_ = Parameter(name + ".weight", std::move(weight));
  bias_ = Parameter(name + ".bias", std::move(bias));
}

Matrix Dense::forward(const Matrix& x) const {
  if (x.cols() != in_dim())
    throw ShapeError("Dense " + weight_.name + ": expected " + std::to_string(in_dim()) +
                     " inputs, got " + std::to_string(x.cols()));
  Matrix y;
  y.noalias() = x * weight_.value.transpose();
  y.rowwise() += bias_.value.row(0);
  return apply_activation(y, act_);
}

Var Dense::forward(Tape& tape, const Var& x, bool trainable) {
  if (x.cols() != in_dim())
    throw ShapeError("Dense " + weight_.name + ": expected " + std::to_string(in_dim()) +
                     " inputs, got " + std::to_string(x.cols()));
  const Var w = trainable ? tape.parameter(weight_) : tape.frozen(weight_);
  const Var b = trainable ? tape.parameter(bias_) : tape.frozen(bias_);
  return apply_activation(add(matmul_nt(x, w), b), act_);
}

Mlp::Mlp(std::string name, const std::vector<Eigen::Index>& widths, Activation hidden,
         Activation output, Rng& rng) {
  if (widths.size() < 2) throw ShapeError("Mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers_.emplace_back(name + "." + std::to_string(i), widths[i], widths[i + 1],
                         last ? output : hidden, rng);
  }
}

Matrix Mlp::forward(const Matrix& x) const {
  Matrix h = x;
  for (const Dense& l : layers_) h = l.forward(h);
  return h;
}

Var Mlp::forward(Tape& tape, const Var& x, bool trainable) {
  Var h = x;
  for (Dense& l : layers_) h = l.forward(tape, h, trainable);
  return h;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (Dense& l : layers_) l.collect(out);
  return out;
}

void Mlp::polyak_from(const Mlp& online, double tau) {
  if (online.layers_.size() != layers_.size()) throw ShapeError("polyak: layer count differs");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Parameter& tw = layers_[i].weight();
    Parameter& tb = layers_[i].bias();
    tw.value = tau * online.layers_[i].weight().value + (1.0 - tau) * tw.value;
    tb.value = tau * online.layers_[i].bias().value + (1.0 - tau) * tb.value;
  }
}

Matrix apply_activation(const Matrix& x, Activation act) {
  switch (act) {
    case Activation::identity:
      return x;
    case Activation::relu:
      return x.cwiseMax(0.0);
    case Activation::tanh:
      return x.array().tanh().matrix();
  }
  return x;
}

Var apply_activation(const Var& x, Activation act) {
  switch (act) {
    case Activation::identity:
      return x;
    case Activation::relu:
      return relu(x);
    case Activation::tanh:
      return tanh(x);
  }
  return x;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  if (q.cols() == 0) throw ShapeError("attention: d_k = 0");
  if (k.cols() != q.cols() || k.rows() != v.rows())
    throw ShapeError("attention: Q, K, V shapes differ");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  AttentionResult r;
  r.scores = softmax_rows((q * k.transpose()) * inv_sqrt);
  r.output = r.scores * v;
  return r;
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& shift, double eps) {
  if (x.cols() < 2) throw ShapeError("layer_norm needs at least two features");
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    out.row(i) = (x.row(i).array() - mu) / std::sqrt(var + eps) * gain.row(0).array() +
                 shift.row(0).array();
  }
  return out;
}

}  // namespace advdiff::nn
