#include "sembg/optim.hpp"

#include <string>

#include "sembg/errors.hpp"

namespace sembg {

OptimizerState make_optimizer_state(std::span<Tensor* const> params, double momentum,
                                    double weight_decay, double lr) {
  OptimizerState state{momentum, weight_decay, lr, {}};
  state.velocity.reserve(params.size());
  for (const Tensor* p : params) state.velocity.emplace_back(p->shape());
  return state;
}

void sgd_step(std::span<Tensor* const> params, OptimizerState& state) {
  if (params.size() != state.velocity.size()) {
    throw ShapeError("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(state.velocity.size()) + " velocity buffers");
  }
  const float mom = static_cast<float>(state.momentum);
  const float wd = static_cast<float>(state.weight_decay);
  const float lr = static_cast<float>(state.current_lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& v = state.velocity[i];
    require_shape(v, p.shape(), "sgd_step velocity");
    if (!p.has_grad()) throw ShapeError("sgd_step: parameter without gradient buffer");
    auto grad = p.grad();
    for (std::size_t j = 0; j < p.numel(); ++j) {
      v[j] = mom * v[j] + (grad[j] + wd * p[j]);
      p[j] -= lr * v[j];
    }
  }
}

double lr_at(int epoch, int total_epochs, double lr0) {
  if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs) {
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(total_epochs) + ")");
  }
  const double e = epoch;
  const double half = 0.5 * total_epochs;
  const double end = 0.9 * total_epochs;
  if (e < half) return lr0;
  if (e >= end) return lr0 / 100.0;
  // lr0 * (10 (end - half) - 9 (e - half)) / (100 (end - half)), with a
  // single rounding when the numerator and scaled denominator are integers.
  const double span = end - half;
  return (10.0 * span - 9.0 * (e - half)) / (100.0 * span / lr0);
}

}  // namespace sembg
