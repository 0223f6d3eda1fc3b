#pragma once

#include <span>
#include <vector>

#include "sembg/tensor.hpp"

namespace sembg {

// SGD with heavy-ball momentum and coupled L2 weight decay:
//   v <- momentum * v + (grad + weight_decay * param)
//   param <- param - lr * v
struct OptimizerState {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double current_lr = 0.1;
  std::vector<Tensor> velocity;  // one per parameter, same shape
};

OptimizerState make_optimizer_state(std::span<Tensor* const> params, double momentum,
                                    double weight_decay, double lr);

// Reads each parameter's gradient buffer.
void sgd_step(std::span<Tensor* const> params, OptimizerState& state);

// lr0 for the first half of training, lr0/10 at the midpoint decaying
// linearly to lr0/100 at 90% of training, then constant.
double lr_at(int epoch, int total_epochs, double lr0);

}  // namespace sembg
