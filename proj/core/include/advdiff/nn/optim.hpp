#pragma once

#include <span>
#include <vector>

#include "advdiff/nn/autodiff.hpp"

namespace advdiff::nn {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step_count = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

/// One bias-corrected Adam update of params in place. Moments are created
/// (zeroed) on first use. Throws ShapeError if shapes disagree.
void adam_step(AdamState& state, std::span<Matrix* const> params,
               std::span<const Matrix* const> grads);

/// Adam bound to a fixed parameter list, reading Parameter::grad.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter*> params, AdamConfig config);

  void step();
  void zero_grad();

  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }
  const std::vector<Parameter*>& parameters() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  AdamState state_;
};

}  // namespace advdiff::nn
