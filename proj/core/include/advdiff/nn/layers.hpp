#pragma once

#include <random>
#include <string>
#include <vector>

#include "advdiff/nn/autodiff.hpp"

namespace advdiff::nn {

using Rng = std::mt19937_64;

enum class Activation { identity, relu, tanh };

/// Fully connected layer: activation(x W^T + b), rows of x are samples.
class Dense {
 public:
  Dense() = default;
  /// Weights and bias drawn uniformly from +-sqrt(1/in).
  Dense(std::string name, Eigen::Index in, Eigen::Index out, Activation act, Rng& rng);
  Dense(std::string name, Matrix weight, Matrix bias, Activation act);

  Matrix forward(const Matrix& x) const;
  Var forward(Tape& tape, const Var& x, bool trainable = true);

  Eigen::Index in_dim() const { return weight_.value.cols(); }
  Eigen::Index out_dim() const { return weight_.value.rows(); }
  Activation activation() const { return act_; }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Parameter weight_;
  Parameter bias_;
  Activation act_ = Activation::identity;
};

/// Stack of Dense layers; hidden layers share one activation.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, const std::vector<Eigen::Index>& widths, Activation hidden,
      Activation output, Rng& rng);

  Matrix forward(const Matrix& x) const;
  Var forward(Tape& tape, const Var& x, bool trainable = true);

  std::vector<Parameter*> parameters();
  std::vector<Dense>& layers() { return layers_; }
  const std::vector<Dense>& layers() const { return layers_; }

  /// target <- tau * online + (1 - tau) * target, elementwise.
  void polyak_from(const Mlp& online, double tau);

 private:
  std::vector<Dense> layers_;
};

Matrix apply_activation(const Matrix& x, Activation act);
Var apply_activation(const Var& x, Activation act);

/// Numerically stable softmax of every row.
Matrix softmax_rows(const Matrix& logits);

struct AttentionResult {
  Matrix output;
  Matrix scores;
};

/// softmax(Q K^T / sqrt(d_k)) V for one head; Q, K, V are tokens x d_k.
AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v);

/// gain * (x - mean) / sqrt(var + eps) + shift over each row.
Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& shift, double eps = 1e-5);

}  // namespace advdiff::nn
