#include <doctest.h>

#include <vector>

#include "sembg/errors.hpp"
#include "sembg/optim.hpp"

using namespace sembg;

namespace {

struct Single {
  Tensor param;
  std::vector<Tensor*> list;
  OptimizerState state;

  Single(float value, double momentum, double wd, double lr) : param({1}, value) {
    param.enable_grad();
    list.push_back(&param);
    state = make_optimizer_state(list, momentum, wd, lr);
  }
  void step(float grad) {
    param.grad()[0] = grad;
    sgd_step(list, state);
  }
};

}  // namespace

TEST_CASE("plain gradient step") {
  Single s(0.0f, 0.0, 0.0, 0.1);
  s.step(1.0f);
  CHECK(s.param[0] == doctest::Approx(-0.1f));
}

TEST_CASE("momentum recursion: deltas -1 then -1.9") {
  Single s(0.0f, 0.9, 0.0, 1.0);
  s.step(1.0f);
  CHECK(s.param[0] == doctest::Approx(-1.0f));
  s.step(1.0f);
  CHECK(s.param[0] == doctest::Approx(-2.9f));
}

TEST_CASE("pure weight decay") {
  Single s(2.0f, 0.0, 0.1, 1.0);
  s.step(0.0f);
  CHECK(s.param[0] == doctest::Approx(1.8f));
}

TEST_CASE("one velocity buffer per parameter with identical shape") {
  Tensor a({2, 3}), b({4});
  std::vector<Tensor*> params{&a, &b};
  const OptimizerState st = make_optimizer_state(params, 0.9, 5e-4, 0.1);
  REQUIRE(st.velocity.size() == 2);
  CHECK(st.velocity[0].shape() == a.shape());
  CHECK(st.velocity[1].shape() == b.shape());
  std::vector<Tensor*> fewer{&a};
  OptimizerState copy = st;
  CHECK_THROWS_AS(sgd_step(fewer, copy), ShapeError);
}

TEST_CASE("learning-rate schedule anchor points") {
  CHECK(lr_at(0, 200, 0.1) == 0.1);
  CHECK(lr_at(99, 200, 0.1) == 0.1);
  CHECK(lr_at(100, 200, 0.1) == 0.01);
  CHECK(lr_at(140, 200, 0.1) == doctest::Approx(0.0055).epsilon(1e-12));
  for (int e = 180; e < 200; ++e) CHECK(lr_at(e, 200, 0.1) == 0.001);
  CHECK_THROWS_AS(lr_at(200, 200, 0.1), ConfigError);
  CHECK_THROWS_AS(lr_at(-1, 200, 0.1), ConfigError);
}

TEST_CASE("learning-rate schedule is non-increasing") {
  for (int total : {1, 2, 7, 30, 200}) {
    double prev = lr_at(0, total, 0.1);
    for (int e = 1; e < total; ++e) {
      const double lr = lr_at(e, total, 0.1);
      CHECK(lr <= prev);
      prev = lr;
    }
  }
}
