#include "advdiff/nn/optim.hpp"

#include <cmath>

#include "advdiff/error.hpp"

namespace advdiff::nn {

void adam_step(AdamState& state, std::span<Matrix* const> params,
               std::span<const Matrix* const> grads) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient count differs");
  if (state.first_moment.empty()) {
    for (const Matrix* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size())
    throw ShapeError("adam: state was built for a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i]->rows() || params[i]->cols() != grads[i]->cols() ||
        state.first_moment[i].rows() != params[i]->rows() ||
        state.first_moment[i].cols() != params[i]->cols())
      throw ShapeError("adam: shape mismatch at parameter " + std::to_string(i));
  }

  ++state.step_count;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    const Matrix& g = *grads[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    params[i]->array() -=
        c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config) : params_(std::move(params)) {
  state_.config = config;
}

void Adam::step() {
  std::vector<Matrix*> values;
  std::vector<const Matrix*> grads;
  values.reserve(params_.size());
  grads.reserve(params_.size());
  for (Parameter* p : params_) {
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) p->zero_grad();
    values.push_back(&p->value);
    grads.push_back(&p->grad);
  }
  adam_step(state_, values, grads);
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace advdiff::nn
