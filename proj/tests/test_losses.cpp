#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "sembg/errors.hpp"
#include "sembg/ops.hpp"
#include "test_util.hpp"

using namespace sembg;
using namespace sembg::testing;

namespace {

Tensor row(std::vector<float> v) {
  const std::size_t m = v.size();
  return Tensor({1, m}, std::move(v));
}

}  // namespace

TEST_CASE("softmax examples") {
  const Tensor p = softmax_temp(row({0.0f, 0.0f}), 2.5);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));
  const Tensor q = softmax_temp(row({2.0f, 0.0f}), 2.0);
  const double e = std::exp(1.0);
  CHECK(q[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-6));
  CHECK(q[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-6));
  CHECK(q[0] == doctest::Approx(0.7311).epsilon(1e-4));
}

TEST_CASE("softmax properties on random logits") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = random_tensor({4, 6}, rng, 5.0f);
    const double t = 0.5 + static_cast<double>(trial % 5);
    const Tensor p = softmax_temp(z, t);
    Tensor shifted = z;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t j = 0; j < 6; ++j) shifted.at(r, j) += static_cast<float>(r) * 3.0f - 4.0f;
    const Tensor ps = softmax_temp(shifted, t);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) s += p.at(r, j);
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
    CHECK(max_abs_diff(p, ps) <= 1e-6);
  }
}

TEST_CASE("high temperature flattens the distribution") {
  const Tensor z = row({5.0f, -3.0f, 1.0f});
  double prev = 1.0;
  for (double t : {1.0, 10.0, 100.0, 1e4}) {
    const Tensor p = softmax_temp(z, t);
    const double spread = *std::max_element(p.data().begin(), p.data().end()) -
                          *std::min_element(p.data().begin(), p.data().end());
    CHECK(spread < prev);
    prev = spread;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("softmax rejects bad inputs") {
  CHECK_THROWS_AS(softmax_temp(row({1.0f, std::numeric_limits<float>::infinity()}), 1.0), NumericError);
  CHECK_THROWS_AS(softmax_temp(row({1.0f, 0.0f}), 0.0), ConfigError);
  CHECK_THROWS_AS(softmax_temp(row({1.0f}), 1.0), ShapeError);
}

TEST_CASE("cross entropy examples") {
  const Tensor y = one_hot({2}, 4);
  CHECK(cross_entropy(y, y)[0] == 0.0);
  const Tensor uniform({1, 4}, 0.25f);
  CHECK(cross_entropy(uniform, y)[0] == doctest::Approx(std::log(4.0)));
  CHECK(cross_entropy(uniform, y)[0] == doctest::Approx(1.3863).epsilon(1e-4));
  // Zero probability on the true class is floored rather than infinite.
  const Tensor wrong = one_hot({0}, 4);
  CHECK(cross_entropy(wrong, y)[0] == doctest::Approx(-std::log(kLogFloor)));
}

TEST_CASE("cross entropy is non-negative") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = softmax_temp(random_tensor({3, 5}, rng, 3.0f), 1.0);
    const Tensor y = one_hot({static_cast<int>(rng() % 5), static_cast<int>(rng() % 5), 0}, 5);
    for (double l : cross_entropy(p, y)) CHECK(l >= 0.0);
  }
}

TEST_CASE("fused softmax cross-entropy gradient is (p - y) / N and matches central differences") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = random_tensor({4, 5}, rng, 2.0f);
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng() % 5));
    const Tensor y = one_hot(labels, 5);
    const Tensor p = softmax_temp(z, 1.0);
    const Tensor g = softmax_cross_entropy_grad(p, y);
    const CeLoss fused = softmax_cross_entropy(z, labels);
    CHECK(max_abs_diff(g, fused.dlogits) <= 1e-6);
    for (std::size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == doctest::Approx((p[i] - y[i]) / 4.0f));
    const auto f = [&] {
      const auto losses = cross_entropy(softmax_temp(z, 1.0), y);
      double s = 0.0;
      for (double l : losses) s += l;
      return s / 4.0;
    };
    CHECK(fused.loss == doctest::Approx(f()).epsilon(1e-6));
    CHECK(gradient_error(z, g, [&] { return softmax_cross_entropy(z, labels).loss; }, rng, 1e-2) <= 1e-3);
  }
}

TEST_CASE("distillation loss examples") {
  CHECK(kd_loss(row({0.3f, -1.0f}), row({0.3f, -1.0f}), 3.0, true).loss == doctest::Approx(0.0));
  // KL(softmax([1,0]) || [0.5, 0.5]) evaluated by hand.
  const double e = std::exp(1.0);
  const double p0 = e / (e + 1.0), p1 = 1.0 / (e + 1.0);
  const double expected = p0 * std::log(p0 / 0.5) + p1 * std::log(p1 / 0.5);
  CHECK(kd_loss(row({0.0f, 0.0f}), row({1.0f, 0.0f}), 1.0, true).loss == doctest::Approx(expected).epsilon(1e-9));
  // t^2 prefactor applied to the tempered distributions.
  const double t = 2.0;
  const double q0 = std::exp(0.5) / (std::exp(0.5) + 1.0), q1 = 1.0 - q0;
  const double tempered = t * t * (q0 * std::log(q0 / 0.5) + q1 * std::log(q1 / 0.5));
  CHECK(kd_loss(row({0.0f, 0.0f}), row({1.0f, 0.0f}), t, true).loss == doctest::Approx(tempered).epsilon(1e-9));
}

TEST_CASE("distillation loss is non-negative and zero only for equal distributions") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor zs = random_tensor({3, 4}, rng, 2.0f);
    const Tensor zt = random_tensor({3, 4}, rng, 2.0f);
    CHECK(kd_loss(zs, zt, 3.0, true).loss > 0.0);
    Tensor shifted = zs;
    for (auto& v : shifted.data()) v += 1.5f;
    CHECK(kd_loss(zs, shifted, 3.0, true).loss == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("distillation gradients match central differences") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor zs = random_tensor({3, 5}, rng, 2.0f);
    Tensor zt = random_tensor({3, 5}, rng, 2.0f);
    const double t = 1.0 + static_cast<double>(trial % 4);
    const KdLoss detached = kd_loss(zs, zt, t, true);
    for (float v : detached.dteacher.data()) CHECK(v == 0.0f);
    const auto f = [&] { return kd_loss(zs, zt, t, true).loss; };
    CHECK(gradient_error(zs, detached.dstudent, f, rng) <= 1e-3);
    const KdLoss attached = kd_loss(zs, zt, t, false);
    CHECK(max_abs_diff(attached.dstudent, detached.dstudent) == 0.0);
    CHECK(gradient_error(zt, attached.dteacher, f, rng) <= 1e-3);
  }
}

TEST_CASE("one-hot encoding") {
  const Tensor y = one_hot({1, 0}, 3);
  CHECK(y == Tensor({2, 3}, std::vector<float>{0, 1, 0, 1, 0, 0}));
  CHECK_THROWS_AS(one_hot({3}, 3), ShapeError);
}
