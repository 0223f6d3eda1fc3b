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

// Keeps values away from the ReLU kink so central differences stay exact.
Tensor away_from_zero(Tensor t) {
  for (auto& v : t.data()) {
    if (std::abs(v) < 0.1f) v = v < 0.0f ? v - 0.1f : v + 0.1f;
  }
  return t;
}

}  // namespace

TEST_CASE("relu example") {
  const Tensor y = relu(Tensor({3}, std::vector<float>{-1.0f, 0.0f, 2.0f}));
  CHECK(y == Tensor({3}, std::vector<float>{0.0f, 0.0f, 2.0f}));
  CHECK_THROWS_AS(relu(Tensor({1}, std::vector<float>{std::numeric_limits<float>::quiet_NaN()})), NumericError);
}

TEST_CASE("global average pool of a constant map") {
  const Tensor y = global_avg_pool(Tensor({2, 3, 4, 4}, 5.0f));
  REQUIRE(y.shape() == Shape{2, 3});
  for (float v : y.data()) CHECK(v == 5.0f);
}

TEST_CASE("linear with identity weight and zero bias is the identity") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({3, 4}, rng);
  Tensor w({4, 4});
  for (std::size_t i = 0; i < 4; ++i) w.at(i, i) = 1.0f;
  CHECK(linear(x, w, Tensor({4})) == x);
  CHECK_THROWS_AS(linear(x, Tensor({4, 5}), Tensor({4})), ShapeError);
}

TEST_CASE("residual add checks shapes") {
  CHECK(residual_add(Tensor({2}, 1.0f), Tensor({2}, 2.0f)) == Tensor({2}, 3.0f));
  CHECK_THROWS_AS(residual_add(Tensor({2}), Tensor({3})), ShapeError);
}

TEST_CASE("batch norm: constant channels normalize to zero") {
  BatchNormParams p(2);
  const Tensor y = batchnorm2d(Tensor({4, 2, 3, 3}, 7.0f), p);
  for (float v : y.data()) CHECK(v == doctest::Approx(0.0f));
}

TEST_CASE("batch norm eval mode is the affine map of the running statistics") {
  BatchNormParams p(1);
  p.gamma[0] = 2.0f;
  p.beta[0] = 1.0f;
  p.epsilon = 0.0f;
  p.mode = NormMode::eval;
  const Tensor y = batchnorm2d(Tensor({1, 1, 1, 1}, 1.0f), p);
  CHECK(y[0] == doctest::Approx(3.0f));
}

TEST_CASE("batch norm train output has zero mean and unit variance per channel") {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({8, 3, 4, 4}, rng, 3.0f);
  for (auto& v : x.data()) v += 2.0f;
  BatchNormParams p(3);
  const Tensor y = batchnorm2d(x, p);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0, sq = 0.0;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t i = 0; i < 16; ++i) {
        const double v = y[(b * 3 + c) * 16 + i];
        s += v;
        sq += v * v;
      }
    CHECK(std::abs(s / 128.0) <= 1e-5);
    CHECK(sq / 128.0 == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("batch norm running statistics use momentum 0.1 and the unbiased variance") {
  BatchNormParams p(1);
  const Tensor x({2, 1, 1, 2}, std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f});
  batchnorm2d(x, p);
  CHECK(p.running_mean[0] == doctest::Approx(0.25f));
  // unbiased variance of {1,2,3,4} is 5/3
  CHECK(p.running_var[0] == doctest::Approx(0.9f + 0.1f * 5.0f / 3.0f));
}

TEST_CASE("batch norm rejects degenerate batches in train mode") {
  BatchNormParams p(1);
  CHECK_THROWS_AS(batchnorm2d(Tensor({1, 1, 1, 1}, 2.0f), p), NumericError);
  CHECK_THROWS_AS(batchnorm2d(Tensor({1, 1, 2, 2}, 2.0f), p), NumericError);
  CHECK_THROWS_AS(batchnorm2d(Tensor({1, 2, 2, 2}), p), ShapeError);
}

TEST_CASE("eval-mode forward is repeatable") {
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({2, 3, 4, 4}, rng);
  BatchNormParams p(3);
  batchnorm2d(x, p);
  p.mode = NormMode::eval;
  CHECK(batchnorm2d_eval(x, p) == batchnorm2d_eval(x, p));
}

TEST_CASE("elementwise and dense gradients match central differences") {
  std::mt19937_64 rng(31);
  SUBCASE("relu") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = away_from_zero(random_tensor({2, 3, 3, 3}, rng));
      const Tensor w = random_tensor(x.shape(), rng);
      CHECK(gradient_error(x, relu_backward(x, w), [&] { return probe(relu(x), w); }, rng) <= 1e-3);
    }
  }
  SUBCASE("global_avg_pool") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = random_tensor({2, 3, 3, 4}, rng);
      const Tensor w = random_tensor({2, 3}, rng);
      CHECK(gradient_error(x, global_avg_pool_backward(x.shape(), w),
                           [&] { return probe(global_avg_pool(x), w); }, rng) <= 1e-3);
    }
  }
  SUBCASE("linear") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = random_tensor({3, 5}, rng);
      Tensor wt = random_tensor({4, 5}, rng);
      Tensor b = random_tensor({4}, rng);
      const Tensor w = random_tensor({3, 4}, rng);
      const LinearGrads g = linear_backward(x, wt, w);
      const auto f = [&] { return probe(linear(x, wt, b), w); };
      CHECK(gradient_error(x, g.dx, f, rng) <= 1e-3);
      CHECK(gradient_error(wt, g.dw, f, rng) <= 1e-3);
      CHECK(gradient_error(b, g.db, f, rng) <= 1e-3);
    }
  }
  SUBCASE("residual_add") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a = random_tensor({2, 5}, rng);
      const Tensor b = random_tensor({2, 5}, rng);
      const Tensor w = random_tensor({2, 5}, rng);
      CHECK(gradient_error(a, w, [&] { return probe(residual_add(a, b), w); }, rng) <= 1e-3);
    }
  }
  SUBCASE("slice_channels") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = random_tensor({2, 5, 2, 2}, rng);
      const Tensor w = random_tensor({2, 3, 2, 2}, rng);
      CHECK(gradient_error(x, pad_channels(w, 5), [&] { return probe(slice_channels(x, 3), w); }, rng) <= 1e-3);
    }
  }
}

TEST_CASE("batch norm gradients match central differences") {
  std::mt19937_64 rng(41);
  for (const bool train : {true, false}) {
    for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({3, 2, 3, 3}, rng, 2.0f);
    BatchNormParams p(2);
    p.gamma = random_tensor({2}, rng);
    p.beta = random_tensor({2}, rng);
    const Tensor w = random_tensor(x.shape(), rng);
    if (train) {
      BatchNormCache cache;
      batchnorm2d(x, p, &cache);
      const BatchNormGrads g = batchnorm2d_backward(w, p, cache);
      const auto f = [&] { return probe(batchnorm2d(x, p), w); };
      CHECK(gradient_error(x, g.dx, f, rng, 1e-2) <= 1e-3);
      CHECK(gradient_error(p.gamma, g.dgamma, f, rng) <= 1e-3);
      CHECK(gradient_error(p.beta, g.dbeta, f, rng) <= 1e-3);
    }
    else {
      p.running_mean = random_tensor({2}, rng);
      p.running_var = Tensor({2}, 1.5f);
      p.mode = NormMode::eval;
      BatchNormCache cache;
      batchnorm2d(x, p, &cache);
      const BatchNormGrads g = batchnorm2d_backward(w, p, cache);
      const auto f = [&] { return probe(batchnorm2d(x, p), w); };
      CHECK(gradient_error(x, g.dx, f, rng) <= 1e-3);
      CHECK(gradient_error(p.gamma, g.dgamma, f, rng) <= 1e-3);
    }
    }
  }
}
