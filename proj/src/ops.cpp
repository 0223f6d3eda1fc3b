#include <algorithm>
#include <cmath>
#include <string>

#include "gemm.hpp"
#include "sembg/errors.hpp"
#include "sembg/ops.hpp"

namespace sembg {

BatchNormParams::BatchNormParams(std::size_t channels)
    : gamma({channels}, 1.0f),
      beta({channels}, 0.0f),
      running_mean({channels}, 0.0f),
      running_var({channels}, 1.0f) {}

namespace {

void check_bn_input(const Tensor& x, const BatchNormParams& p) {
  require_rank(x, 4, "batchnorm2d input");
  if (x.dim(1) != p.channels()) {
    throw ShapeError("batchnorm2d: input has " + std::to_string(x.dim(1)) +
                     " channels, parameters have " + std::to_string(p.channels()));
  }
}

}  // namespace

Tensor batchnorm2d_eval(const Tensor& x, const BatchNormParams& p) {
  check_bn_input(x, p);
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(p.running_var[ch]) + p.epsilon);
    const float scale = static_cast<float>(p.gamma[ch] * inv);
    const float shift = static_cast<float>(p.beta[ch] - p.running_mean[ch] * p.gamma[ch] * inv);
    for (std::size_t b = 0; b < n; ++b) {
      const float* src = x.ptr() + (b * c + ch) * hw;
      float* dst = y.ptr() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * scale + shift;
    }
  }
  y.ensure_finite("batchnorm2d output");
  return y;
}

Tensor batchnorm2d(const Tensor& x, BatchNormParams& p, BatchNormCache* cache) {
  if (p.mode == NormMode::eval) {
    Tensor y = batchnorm2d_eval(x, p);
    if (cache) {
      cache->mode = NormMode::eval;
      cache->x_hat = Tensor(x.shape());
      cache->inv_std.assign(p.channels(), 0.0f);
      const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(p.running_var[ch]) + p.epsilon);
        cache->inv_std[ch] = static_cast<float>(inv);
        for (std::size_t b = 0; b < n; ++b) {
          const float* src = x.ptr() + (b * c + ch) * hw;
          float* dst = cache->x_hat.ptr() + (b * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            dst[i] = static_cast<float>((src[i] - p.running_mean[ch]) * inv);
          }
        }
      }
    }
    return y;
  }

  check_bn_input(x, p);
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t count = n * hw;
  if (count < 2) {
    throw NumericError("batchnorm2d: degenerate statistics, one value per channel in train mode");
  }
  Tensor y(x.shape());
  Tensor x_hat(x.shape());
  std::vector<float> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const float* src = x.ptr() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) sum += src[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const float* src = x.ptr() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = src[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(count);
    if (n == 1 && var == 0.0) {
      throw NumericError("batchnorm2d: degenerate statistics, batch of one with zero variance in channel " +
                         std::to_string(ch));
    }
    const double inv = 1.0 / std::sqrt(var + p.epsilon);
    inv_std[ch] = static_cast<float>(inv);
    for (std::size_t b = 0; b < n; ++b) {
      const float* src = x.ptr() + (b * c + ch) * hw;
      float* xh = x_hat.ptr() + (b * c + ch) * hw;
      float* dst = y.ptr() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = static_cast<float>((src[i] - mean) * inv);
        dst[i] = p.gamma[ch] * xh[i] + p.beta[ch];
      }
    }
    const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
    p.running_mean[ch] =
        static_cast<float>((1.0 - p.momentum) * p.running_mean[ch] + p.momentum * mean);
    p.running_var[ch] =
        static_cast<float>((1.0 - p.momentum) * p.running_var[ch] + p.momentum * unbiased);
  }
  y.ensure_finite("batchnorm2d output");
  if (cache) {
    cache->mode = NormMode::train;
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

BatchNormGrads batchnorm2d_backward(const Tensor& dy, const BatchNormParams& p,
                                    const BatchNormCache& cache) {
  require_shape(dy, cache.x_hat.shape(), "batchnorm2d_backward dy");
  const std::size_t n = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
  const double count = static_cast<double>(n * hw);
  BatchNormGrads g{Tensor(dy.shape()), Tensor({c}), Tensor({c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const float* d = dy.ptr() + (b * c + ch) * hw;
      const float* xh = cache.x_hat.ptr() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += d[i];
        sum_dy_xh += static_cast<double>(d[i]) * xh[i];
      }
    }
    g.dgamma[ch] = static_cast<float>(sum_dy_xh);
    g.dbeta[ch] = static_cast<float>(sum_dy);
    const double scale = static_cast<double>(p.gamma[ch]) * cache.inv_std[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const float* d = dy.ptr() + (b * c + ch) * hw;
      const float* xh = cache.x_hat.ptr() + (b * c + ch) * hw;
      float* dx = g.dx.ptr() + (b * c + ch) * hw;
      if (cache.mode == NormMode::eval) {
        for (std::size_t i = 0; i < hw; ++i) dx[i] = static_cast<float>(d[i] * scale);
      } else {
        for (std::size_t i = 0; i < hw; ++i) {
          dx[i] = static_cast<float>(scale * (d[i] - sum_dy / count - xh[i] * sum_dy_xh / count));
        }
      }
    }
  }
  return g;
}

Tensor relu(const Tensor& x) {
  x.ensure_finite("relu input");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require_shape(dy, x.shape(), "relu_backward dy");
  Tensor dx(x.shape());
  const float* __restrict xs = x.ptr();
  const float* __restrict ds = dy.ptr();
  float* __restrict out = dx.ptr();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float d = ds[i];
    out[i] = xs[i] > 0.0f ? d : 0.0f;
  }
  return dx;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    const float* src = x.ptr() + i * hw;
    for (std::size_t j = 0; j < hw; ++j) s += src[j];
    y[i] = static_cast<float>(s / static_cast<double>(hw));
  }
  y.ensure_finite("global_avg_pool output");
  return y;
}

Tensor global_avg_pool_backward(const Shape& x_shape, const Tensor& dy) {
  if (x_shape.size() != 4) throw ShapeError("global_avg_pool_backward: input must be rank 4");
  require_shape(dy, {x_shape[0], x_shape[1]}, "global_avg_pool_backward dy");
  const std::size_t hw = x_shape[2] * x_shape[3];
  Tensor dx(x_shape);
  const float inv = 1.0f / static_cast<float>(hw);
  for (std::size_t i = 0; i < dy.numel(); ++i) {
    float* dst = dx.ptr() + i * hw;
    for (std::size_t j = 0; j < hw; ++j) dst[j] = dy[i] * inv;
  }
  return dx;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const std::size_t n = x.dim(0), d = x.dim(1), m = w.dim(0);
  if (w.dim(1) != d) {
    throw ShapeError("linear: input width " + std::to_string(d) + " vs weight " + shape_str(w.shape()));
  }
  require_shape(b, {m}, "linear bias");
  Tensor y({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < m; ++j) y.at(r, j) = b[j];
  }
  detail::gemm_nt(n, m, d, x.ptr(), d, w.ptr(), d, y.ptr(), m);
  y.ensure_finite("linear output");
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  const std::size_t n = x.dim(0), d = x.dim(1), m = w.dim(0);
  require_shape(dy, {n, m}, "linear_backward dy");
  LinearGrads g{Tensor({n, d}), Tensor({m, d}), Tensor({m})};
  detail::gemm_nn(n, d, m, dy.ptr(), m, w.ptr(), d, g.dx.ptr(), d);
  detail::gemm_tn(m, d, n, dy.ptr(), m, x.ptr(), d, g.dw.ptr(), d);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += dy.at(r, j);
    g.db[j] = static_cast<float>(s);
  }
  return g;
}

Tensor residual_add(const Tensor& a, const Tensor& b) {
  require_shape(b, a.shape(), "residual_add");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  y.ensure_finite("residual_add output");
  return y;
}

Tensor slice_channels(const Tensor& x, std::size_t count) {
  require_rank(x, 4, "slice_channels input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (count == 0 || count > c) throw ShapeError("slice_channels: invalid channel count");
  if (count == c) return x;
  Tensor y({n, count, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < n; ++b) {
    std::copy_n(x.ptr() + b * c * hw, count * hw, y.ptr() + b * count * hw);
  }
  return y;
}

Tensor pad_channels(const Tensor& dy, std::size_t channels) {
  require_rank(dy, 4, "pad_channels input");
  const std::size_t n = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
  if (channels < c) throw ShapeError("pad_channels: target smaller than input");
  if (channels == c) return dy;
  Tensor y({n, channels, dy.dim(2), dy.dim(3)});
  for (std::size_t b = 0; b < n; ++b) {
    std::copy_n(dy.ptr() + b * c * hw, c * hw, y.ptr() + b * channels * hw);
  }
  return y;
}

}  // namespace sembg
