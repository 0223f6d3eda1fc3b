#include <doctest.h>

#include <cmath>
#include <limits>

#include "sembg/errors.hpp"
#include "sembg/tensor.hpp"

using namespace sembg;

TEST_CASE("data length equals the product of the extents") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK(shape_str({2, 3, 4}) == "[2,3,4]");
}

TEST_CASE("zero or mismatched extents are rejected") {
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3, 0.0f)), ShapeError);
}

TEST_CASE("grad buffer matches data length") {
  Tensor t({3, 2}, 1.5f);
  CHECK_FALSE(t.has_grad());
  t.enable_grad();
  REQUIRE(t.has_grad());
  CHECK(t.grad().size() == t.numel());
  t.grad()[4] = 2.0f;
  t.zero_grad();
  CHECK(t.grad()[4] == 0.0f);
}

TEST_CASE("4-D and 2-D accessors are row-major") {
  Tensor t({2, 3, 4, 5});
  t.at(1, 2, 3, 4) = 7.0f;
  CHECK(t[((1 * 3 + 2) * 4 + 3) * 5 + 4] == 7.0f);
  Tensor m({2, 3});
  m.at(1, 2) = 4.0f;
  CHECK(m[5] == 4.0f);
}

TEST_CASE("reshape keeps data and checks the element count") {
  Tensor t({2, 6});
  t[7] = 3.0f;
  const Tensor r = t.reshaped({3, 4});
  CHECK(r[7] == 3.0f);
  CHECK_THROWS_AS(t.reshaped({5, 2}), ShapeError);
}

TEST_CASE("non-finite values are reported with their position") {
  Tensor t({4}, 0.0f);
  CHECK_NOTHROW(t.ensure_finite("probe"));
  t[2] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(t.ensure_finite("probe"), NumericError);
  t[2] = std::numeric_limits<float>::infinity();
  try {
    t.ensure_finite("probe");
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("index 2") != std::string::npos);
  }
}

TEST_CASE("shape requirements") {
  Tensor t({2, 2});
  CHECK_NOTHROW(require_shape(t, {2, 2}, "t"));
  CHECK_THROWS_AS(require_shape(t, {2, 3}, "t"), ShapeError);
  CHECK_THROWS_AS(require_rank(t, 4, "t"), ShapeError);
}
