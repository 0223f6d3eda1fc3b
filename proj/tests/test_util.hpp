#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "sembg/tensor.hpp"

namespace sembg::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, float scale = 1.0f) {
  std::normal_distribution<float> nd(0.0f, scale);
  Tensor t(shape);
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

// Weighted sum of every output, in double: a scalar probe whose gradient with
// respect to the outputs is `weights`.
inline double probe(const Tensor& y, const Tensor& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += static_cast<double>(y[i]) * weights[i];
  return s;
}

// Norm-wise relative error between analytic and central-difference gradients
// of `f` with respect to `x`, over up to `max_coords` sampled coordinates.
inline double gradient_error(Tensor& x, const Tensor& analytic, const std::function<double()>& f,
                             std::mt19937_64& rng, double h = 1e-2, std::size_t max_coords = 48) {
  std::vector<std::size_t> coords(x.numel());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  std::shuffle(coords.begin(), coords.end(), rng);
  if (coords.size() > max_coords) coords.resize(max_coords);
  double diff = 0.0, na = 0.0, nf = 0.0;
  for (std::size_t i : coords) {
    const float orig = x[i];
    x[i] = static_cast<float>(orig + h);
    const double up = f();
    x[i] = static_cast<float>(orig - h);
    const double down = f();
    x[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    diff += (fd - analytic[i]) * (fd - analytic[i]);
    na += static_cast<double>(analytic[i]) * analytic[i];
    nf += fd * fd;
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nf), 1e-12});
  return std::sqrt(diff) / denom;
}

inline bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace sembg::testing
