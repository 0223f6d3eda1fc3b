#include <algorithm>
#include <cmath>
#include <string>

#include "sembg/errors.hpp"
#include "sembg/ops.hpp"

namespace sembg {

namespace {

void check_logits(const Tensor& z, const char* what) {
  require_rank(z, 2, what);
  if (z.dim(1) < 2) throw ShapeError(std::string(what) + ": need at least two classes");
  z.ensure_finite(what);
}

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw ConfigError("temperature must be positive, got " + std::to_string(t));
  }
}

// log softmax(row / t) in double precision.
void log_softmax_row(const float* row, std::size_t m, double t, std::vector<double>& out) {
  out.resize(m);
  double mx = row[0] / t;
  for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j] / t);
  double sum = 0.0;
  for (std::size_t j = 0; j < m; ++j) sum += std::exp(row[j] / t - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t j = 0; j < m; ++j) out[j] = row[j] / t - lse;
}

}  // namespace

Tensor softmax_temp(const Tensor& z, double t) {
  check_logits(z, "softmax_temp logits");
  check_temperature(t);
  const std::size_t n = z.dim(0), m = z.dim(1);
  Tensor p(z.shape());
  std::vector<double> logp;
  for (std::size_t r = 0; r < n; ++r) {
    log_softmax_row(z.ptr() + r * m, m, t, logp);
    for (std::size_t j = 0; j < m; ++j) p.at(r, j) = static_cast<float>(std::exp(logp[j]));
  }
  return p;
}

std::vector<double> cross_entropy(const Tensor& p, const Tensor& y) {
  require_rank(p, 2, "cross_entropy probabilities");
  require_shape(y, p.shape(), "cross_entropy targets");
  const std::size_t n = p.dim(0), m = p.dim(1);
  std::vector<double> losses(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double yj = y.at(r, j);
      if (yj != 0.0) s -= yj * std::log(std::max(static_cast<double>(p.at(r, j)), kLogFloor));
    }
    losses[r] = s;
  }
  return losses;
}

Tensor softmax_cross_entropy_grad(const Tensor& p, const Tensor& y) {
  require_shape(y, p.shape(), "softmax_cross_entropy_grad targets");
  const float inv_n = 1.0f / static_cast<float>(p.dim(0));
  Tensor g(p.shape());
  for (std::size_t i = 0; i < p.numel(); ++i) g[i] = (p[i] - y[i]) * inv_n;
  return g;
}

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  if (labels.empty()) throw ShapeError("one_hot: empty label set");
  Tensor y({labels.size(), classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
      throw ShapeError("one_hot: label " + std::to_string(labels[r]) + " out of range");
    }
    y.at(r, static_cast<std::size_t>(labels[r])) = 1.0f;
  }
  return y;
}

CeLoss softmax_cross_entropy(const Tensor& z, const std::vector<int>& labels) {
  check_logits(z, "softmax_cross_entropy logits");
  const std::size_t n = z.dim(0), m = z.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
  CeLoss out{0.0, Tensor(z.shape())};
  std::vector<double> logp;
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= m) throw ShapeError("softmax_cross_entropy: label out of range");
    log_softmax_row(z.ptr() + r * m, m, 1.0, logp);
    total -= logp[static_cast<std::size_t>(y)];
    for (std::size_t j = 0; j < m; ++j) {
      const double target = j == static_cast<std::size_t>(y) ? 1.0 : 0.0;
      out.dlogits.at(r, j) = static_cast<float>((std::exp(logp[j]) - target) / static_cast<double>(n));
    }
  }
  out.loss = total / static_cast<double>(n);
  if (!std::isfinite(out.loss)) throw NumericError("softmax_cross_entropy: non-finite loss");
  return out;
}

KdLoss kd_loss(const Tensor& z_student, const Tensor& z_teacher, double t, bool detach_teacher) {
  check_logits(z_student, "kd_loss student logits");
  check_logits(z_teacher, "kd_loss teacher logits");
  require_shape(z_teacher, z_student.shape(), "kd_loss teacher logits");
  check_temperature(t);
  const std::size_t n = z_student.dim(0), m = z_student.dim(1);
  KdLoss out{0.0, Tensor(z_student.shape()), Tensor(z_student.shape())};
  std::vector<double> log_ps, log_pt;
  const double scale = t / static_cast<double>(n);  // t^2 * (1/t) * (1/n)
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    log_softmax_row(z_student.ptr() + r * m, m, t, log_ps);
    log_softmax_row(z_teacher.ptr() + r * m, m, t, log_pt);
    double kl = 0.0;
    for (std::size_t j = 0; j < m; ++j) kl += std::exp(log_pt[j]) * (log_pt[j] - log_ps[j]);
    kl = std::max(kl, 0.0);
    total += kl;
    for (std::size_t j = 0; j < m; ++j) {
      const double ps = std::exp(log_ps[j]);
      const double pt = std::exp(log_pt[j]);
      out.dstudent.at(r, j) = static_cast<float>(scale * (ps - pt));
      if (!detach_teacher) {
        out.dteacher.at(r, j) = static_cast<float>(scale * pt * ((log_pt[j] - log_ps[j]) - kl));
      }
    }
  }
  out.loss = t * t * total / static_cast<double>(n);
  if (!std::isfinite(out.loss)) throw NumericError("kd_loss: non-finite loss");
  return out;
}

}  // namespace sembg
