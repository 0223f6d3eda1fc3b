#pragma once

#include <optional>
#include <vector>

#include "sembg/tensor.hpp"

namespace sembg {

// ---------------------------------------------------------------------------
// Convolution

// weight: [c_out, c_in / groups, k, k]; bias: [c_out].
struct ConvParams {
  Tensor weight;
  std::optional<Tensor> bias;
  int stride = 1;
  int padding = 0;
  int groups = 1;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1) * static_cast<std::size_t>(groups); }
  std::size_t kernel() const { return weight.dim(2); }
  std::size_t param_count() const;
  void validate() const;
};

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, int stride, int padding);

// x: [N, C_in, H, W] -> [N, C_out, H', W'], H' = floor((H + 2p - k) / s) + 1.
Tensor conv2d(const Tensor& x, const ConvParams& p);

struct ConvGrads {
  Tensor dx;
  Tensor dweight;
  std::optional<Tensor> dbias;
};

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& dy);

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel.

enum class NormMode { train, eval };

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float epsilon = 1e-5f;
  float momentum = 0.1f;
  NormMode mode = NormMode::train;

  explicit BatchNormParams(std::size_t channels);
  BatchNormParams() = default;
  std::size_t channels() const { return gamma.numel(); }
};

// Saved forward state needed by the backward pass.
struct BatchNormCache {
  NormMode mode = NormMode::train;
  Tensor x_hat;
  std::vector<float> inv_std;
};

// Updates running statistics in train mode.
Tensor batchnorm2d(const Tensor& x, BatchNormParams& p, BatchNormCache* cache = nullptr);
// Eval-mode forward without touching p.
Tensor batchnorm2d_eval(const Tensor& x, const BatchNormParams& p);

struct BatchNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};

BatchNormGrads batchnorm2d_backward(const Tensor& dy, const BatchNormParams& p,
                                    const BatchNormCache& cache);

// ---------------------------------------------------------------------------
// Elementwise, pooling, dense.

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& x_shape, const Tensor& dy);

// x: [N, D], w: [M, D], b: [M] -> [N, M]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

struct LinearGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

Tensor residual_add(const Tensor& a, const Tensor& b);

// Leading `count` channels of x.
Tensor slice_channels(const Tensor& x, std::size_t count);
// Inverse of slice_channels for gradients: zero-fills the dropped channels.
Tensor pad_channels(const Tensor& dy, std::size_t channels);

// ---------------------------------------------------------------------------
// Probabilities and losses. Logits are [N, M].

// Row softmax of z / t with max subtraction.
Tensor softmax_temp(const Tensor& z, double t = 1.0);

// Smallest probability used inside logarithms.
inline constexpr double kLogFloor = 1e-12;

// Per-sample -sum_m y^m log p^m; y is one-hot [N, M].
std::vector<double> cross_entropy(const Tensor& p, const Tensor& y);
// Gradient of the batch-mean fused softmax + CE with respect to the logits.
Tensor softmax_cross_entropy_grad(const Tensor& p, const Tensor& y);

Tensor one_hot(const std::vector<int>& labels, std::size_t classes);

// Batch-mean cross-entropy of softmax(z) against integer labels, evaluated
// in double precision straight from the logits.
struct CeLoss {
  double loss = 0.0;
  Tensor dlogits;
};

CeLoss softmax_cross_entropy(const Tensor& z, const std::vector<int>& labels);

struct KdLoss {
  double loss = 0.0;  // t^2 * mean_b KL(p_teacher || p_student)
  Tensor dstudent;
  Tensor dteacher;    // all zeros when the teacher is detached
};

KdLoss kd_loss(const Tensor& z_student, const Tensor& z_teacher, double t, bool detach_teacher);

}  // namespace sembg
