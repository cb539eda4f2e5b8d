#include <doctest.h>

#include "rclnet/tensor.hpp"

using namespace rclnet;

TEST_CASE("tensor shape and storage invariants") {
  Tensor<float> t({2, 3, 4});
  CHECK(t.rank() == 3);
  CHECK(t.size() == 24);
  CHECK(t.extent(1) == 3);
  for (Index i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0f);

  t(1, 2, 3) = 7.0f;
  CHECK(t[t.size() - 1] == 7.0f);
}

TEST_CASE("tensor rejects non-positive extents and mismatched buffers") {
  CHECK_THROWS_AS(Tensor<float>({2, 0, 4}), DimensionError);
  CHECK_THROWS_AS(Tensor<float>({-1}), DimensionError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.0f, 2.0f, 3.0f}), DimensionError);
}

TEST_CASE("reshape preserves data and checks size") {
  Tensor<double> t({2, 6});
  for (Index i = 0; i < t.size(); ++i) t[i] = double(i);
  Tensor<double> r = t.reshaped({3, 4});
  CHECK(r(2, 3) == 11.0);
  CHECK_THROWS_AS(t.reshaped({5, 2}), DimensionError);
}

TEST_CASE("eigen views alias the buffer") {
  Tensor<double> t({2, 3});
  t.matrix(2, 3)(1, 2) = 5.0;
  CHECK(t(1, 2) == 5.0);
  t.array() += 1.0;
  CHECK(t(0, 0) == 1.0);
  CHECK(t.vec().sum() == doctest::Approx(11.0));
}

TEST_CASE("cast converts precision") {
  Tensor<float> t({3}, {1.5f, -2.0f, 0.25f});
  Tensor<double> d = t.cast<double>();
  CHECK(d[0] == 1.5);
  CHECK(d.shape() == t.shape());
}

TEST_CASE("all_finite flags NaN and infinity") {
  Tensor<float> t({2}, {1.0f, 2.0f});
  CHECK(all_finite(t));
  t[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK(!all_finite(t));
}
