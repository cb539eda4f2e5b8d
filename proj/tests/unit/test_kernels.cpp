#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "rclnet/gradcheck.hpp"
#include "rclnet/kernels.hpp"

using namespace rclnet;

namespace {

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = Scalar(dist(rng));
  return t;
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
  std::mt19937_64 rng(1);
  Tensor<float> input = random_tensor<float>({1, 4, 5}, rng);
  Tensor<float> kernels({1, 1, 1, 1}, {1.0f});
  Tensor<float> bias({1});
  Tensor<float> out = conv2d(input, kernels, bias, ConvSpec{});
  CHECK(out == input);
}

TEST_CASE("conv2d all-zero kernels emit the bias everywhere") {
  std::mt19937_64 rng(2);
  Tensor<float> input = random_tensor<float>({2, 3, 3}, rng);
  Tensor<float> kernels({4, 2, 1, 1});
  Tensor<float> bias({4}, {0.5f, -1.0f, 2.0f, 0.0f});
  Tensor<float> out = conv2d(input, kernels, bias, ConvSpec{});
  for (Index k = 0; k < 4; ++k)
    for (Index i = 0; i < 9; ++i) CHECK(out[k * 9 + i] == bias[k]);
}

TEST_CASE("conv2d of all-ones with padded 3x3 kernel: corner 4, edge 6, center 9") {
  Tensor<double> input = Tensor<double>::full({1, 3, 3}, 1.0);
  Tensor<double> kernels = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> bias({1});
  ConvSpec spec{3, 3, 1, 1, 1, 1};
  Tensor<double> out = conv2d(input, kernels, bias, spec);
  Tensor<double> expected = oracles::naive_conv2d(input, kernels, bias, spec);
  CHECK(out(0, 0, 0) == 4.0);
  CHECK(out(0, 0, 1) == 6.0);
  CHECK(out(0, 1, 1) == 9.0);
  for (Index i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(expected[i]));
}

TEST_CASE("conv2d matches the nested-loop oracle on random shapes") {
  std::mt19937_64 rng(3);
  const ConvSpec specs[] = {{3, 3, 1, 1, 1, 1}, {2, 3, 2, 1, 0, 1}, {1, 1, 1, 1, 0, 0},
                            {3, 2, 1, 2, 1, 0}};
  for (const ConvSpec& spec : specs) {
    Tensor<double> input = random_tensor<double>({3, 6, 7}, rng);
    Tensor<double> kernels =
        random_tensor<double>({4, 3, spec.kernel_h, spec.kernel_w}, rng);
    Tensor<double> bias = random_tensor<double>({4}, rng);
    Tensor<double> out = conv2d(input, kernels, bias, spec);
    Tensor<double> expected = oracles::naive_conv2d(input, kernels, bias, spec);
    REQUIRE(out.shape() == expected.shape());
    for (Index i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d rejects mismatched shapes and collapsed outputs") {
  Tensor<float> input({2, 4, 4});
  Tensor<float> kernels({1, 3, 3, 3});  // expects 3 input channels
  Tensor<float> bias({1});
  CHECK_THROWS_AS(conv2d(input, kernels, bias, ConvSpec{3, 3, 1, 1, 0, 0}), DimensionError);

  Tensor<float> kernels2({1, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(Tensor<float>({2, 2, 2}), kernels2, bias, ConvSpec{3, 3, 1, 1, 0, 0}),
                  ConfigError);
  CHECK_THROWS_AS(conv2d(input, kernels2, Tensor<float>({3}), ConvSpec{3, 3, 1, 1, 0, 0}),
                  DimensionError);
}

TEST_CASE("conv2d is linear in the input for fixed kernels") {
  std::mt19937_64 rng(4);
  const ConvSpec spec{3, 3, 1, 1, 1, 1};
  Tensor<double> kernels = random_tensor<double>({2, 2, 3, 3}, rng);
  Tensor<double> zero_bias({2});
  Tensor<double> x = random_tensor<double>({2, 5, 5}, rng);
  Tensor<double> y = random_tensor<double>({2, 5, 5}, rng);
  const double a = 1.7, b = -0.3;

  Tensor<double> combo(x.shape());
  combo.array() = a * x.array() + b * y.array();
  Tensor<double> lhs = conv2d(combo, kernels, zero_bias, spec);
  Tensor<double> rhs = conv2d(x, kernels, zero_bias, spec);
  Tensor<double> rhs2 = conv2d(y, kernels, zero_bias, spec);
  for (Index i = 0; i < lhs.size(); ++i)
    CHECK(lhs[i] == doctest::Approx(a * rhs[i] + b * rhs2[i]).epsilon(1e-10));
}

TEST_CASE("conv2d backward matches central finite differences") {
  std::mt19937_64 rng(5);
  const ConvSpec spec{3, 3, 1, 1, 1, 1};
  Tensor<double> input = random_tensor<double>({2, 4, 5}, rng);
  Tensor<double> kernels = random_tensor<double>({3, 2, 3, 3}, rng);
  Tensor<double> bias = random_tensor<double>({3}, rng);
  Tensor<double> seed = random_tensor<double>({3, 4, 5}, rng);  // fixed loss direction

  auto loss = [&]() {
    Tensor<double> out = conv2d(input, kernels, bias, spec);
    return double((out.array() * seed.array()).sum());
  };
  Tensor<double> out_grad = seed;
  Conv2dGrads<double> grads = conv2d_backward(input, kernels, spec, out_grad);

  CHECK(finite_difference_max_err(input, grads.input, loss) < 1e-6);
  CHECK(finite_difference_max_err(kernels, grads.kernels, loss) < 1e-6);
  CHECK(finite_difference_max_err(bias, grads.bias, loss) < 1e-6);
}

TEST_CASE("maxpool2d on constant input is constant") {
  Tensor<float> input = Tensor<float>::full({2, 4, 4}, 3.25f);
  PoolResult<float> pooled = maxpool2d(input, PoolSpec{2, 2, 2, 2});
  CHECK(pooled.output.shape() == Shape{2, 2, 2});
  for (Index i = 0; i < pooled.output.size(); ++i) CHECK(pooled.output[i] == 3.25f);
}

TEST_CASE("maxpool2d hand-enumerated 2x2 case") {
  Tensor<float> input({1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  PoolResult<float> pooled = maxpool2d(input, PoolSpec{2, 2, 2, 2});
  CHECK(pooled.output.size() == 1);
  CHECK(pooled.output[0] == 4.0f);
  CHECK(pooled.argmax[0] == 3);
}

TEST_CASE("maxpool2d 1x1 stride 1 is the identity") {
  std::mt19937_64 rng(6);
  Tensor<float> input = random_tensor<float>({3, 2, 5}, rng);
  PoolResult<float> pooled = maxpool2d(input, PoolSpec{1, 1, 1, 1});
  CHECK(pooled.output == input);
}

TEST_CASE("maxpool2d drops partial windows (floor semantics)") {
  Tensor<float> input({1, 1, 5}, {1, 2, 3, 4, 9});
  PoolResult<float> pooled = maxpool2d(input, PoolSpec{2, 1, 2, 1});
  CHECK(pooled.output.shape() == Shape{1, 1, 2});
  CHECK(pooled.output[0] == 2.0f);
  CHECK(pooled.output[1] == 4.0f);  // the trailing 9 never enters a window
}

TEST_CASE("maxpool2d rejects pools larger than the input") {
  CHECK_THROWS_AS(maxpool2d(Tensor<float>({1, 2, 2}), PoolSpec{3, 3, 1, 1}), ConfigError);
}

TEST_CASE("maxpool ties resolve to the lowest linear index") {
  Tensor<float> input({1, 2, 2}, {5.0f, 5.0f, 5.0f, 5.0f});
  PoolResult<float> pooled = maxpool2d(input, PoolSpec{2, 2, 2, 2});
  CHECK(pooled.argmax[0] == 0);
}

TEST_CASE("maxpool backward distributes exactly the incoming gradient") {
  std::mt19937_64 rng(7);
  Tensor<double> input = random_tensor<double>({2, 6, 6}, rng);
  PoolResult<double> pooled = maxpool2d(input, PoolSpec{3, 2, 2, 2});
  Tensor<double> out_grad = random_tensor<double>(pooled.output.shape(), rng);
  Tensor<double> in_grad = maxpool2d_backward(input.shape(), pooled.argmax, out_grad);
  CHECK(in_grad.vec().sum() == doctest::Approx(out_grad.vec().sum()).epsilon(1e-12));
}

TEST_CASE("dense identity and zero-weight cases") {
  Tensor<float> x({3}, {1.0f, 2.0f, 3.0f});
  Tensor<float> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<float> zero_bias({3});
  CHECK(dense(x, eye, zero_bias) == x);

  Tensor<float> zero_w({2, 3});
  Tensor<float> bias({2}, {4.0f, 4.0f});
  Tensor<float> out = dense(x, zero_w, bias);
  CHECK(out[0] == 4.0f);
  CHECK(out[1] == 4.0f);
}

TEST_CASE("dense hand dot product") {
  Tensor<double> x({2}, {3.0, 4.0});
  Tensor<double> w({1, 2}, {1.0, 2.0});
  Tensor<double> b({1}, {0.5});
  CHECK(dense(x, w, b)[0] == doctest::Approx(11.5));
}

TEST_CASE("dense rejects dimension mismatches") {
  CHECK_THROWS_AS(dense(Tensor<float>({3}), Tensor<float>({2, 4}), Tensor<float>({2})),
                  DimensionError);
  CHECK_THROWS_AS(dense(Tensor<float>({4}), Tensor<float>({2, 4}), Tensor<float>({3})),
                  DimensionError);
}

TEST_CASE("dense backward matches finite differences") {
  std::mt19937_64 rng(8);
  Tensor<double> x = random_tensor<double>({5}, rng);
  Tensor<double> w = random_tensor<double>({3, 5}, rng);
  Tensor<double> b = random_tensor<double>({3}, rng);
  Tensor<double> seed = random_tensor<double>({3}, rng);

  auto loss = [&]() { return double((dense(x, w, b).array() * seed.array()).sum()); };
  DenseGrads<double> grads = dense_backward(x, w, seed);
  CHECK(finite_difference_max_err(x, grads.input, loss) < 1e-6);
  CHECK(finite_difference_max_err(w, grads.weights, loss) < 1e-6);
  CHECK(finite_difference_max_err(b, grads.bias, loss) < 1e-6);
}

TEST_CASE("batched kernels agree with per-sample results") {
  std::mt19937_64 rng(9);
  const ConvSpec spec{3, 3, 1, 1, 1, 1};
  Tensor<double> batch = random_tensor<double>({3, 2, 4, 5}, rng);
  Tensor<double> kernels = random_tensor<double>({4, 2, 3, 3}, rng);
  Tensor<double> bias = random_tensor<double>({4}, rng);

  Tensor<double> out = conv2d_batched(batch, kernels, bias, spec);
  for (Index b = 0; b < 3; ++b) {
    Tensor<double> sample({2, 4, 5});
    std::copy(batch.data() + b * sample.size(), batch.data() + (b + 1) * sample.size(),
              sample.data());
    Tensor<double> single = conv2d(sample, kernels, bias, spec);
    for (Index i = 0; i < single.size(); ++i) CHECK(out[b * single.size() + i] == single[i]);
  }
}
