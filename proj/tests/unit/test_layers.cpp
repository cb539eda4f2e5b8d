#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "rclnet/gradcheck.hpp"
#include "rclnet/layers.hpp"

using namespace rclnet;

namespace {

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = Scalar(dist(rng));
  return t;
}

RclParams<double> random_rcl(Index maps, Index channels, int iterations, std::mt19937_64& rng,
                             double scale = 0.4) {
  RclParams<double> params;
  params.ff_kernels = random_tensor<double>({maps, channels, 1, 1}, rng, scale);
  params.rec_kernels = random_tensor<double>({maps, maps, 3, 3}, rng, scale);
  params.bias = random_tensor<double>({maps}, rng, scale);
  params.iterations = iterations;
  return params;
}

BatchNormState<double> random_bn(Index maps, std::mt19937_64& rng) {
  BatchNormState<double> bn = BatchNormState<double>::create(maps);
  std::uniform_real_distribution<double> unit(0.5, 1.5);
  std::normal_distribution<double> gauss(0.0, 0.5);
  for (Index k = 0; k < maps; ++k) {
    bn.gamma[k] = unit(rng);
    bn.beta[k] = gauss(rng);
    bn.running_mean[k] = gauss(rng);
    bn.running_var[k] = unit(rng);
  }
  bn.mode = LayerMode::Inference;
  return bn;
}

}  // namespace

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

TEST_CASE("batchnorm leaves an already standardized batch almost unchanged") {
  // Per-map values {-1, +1} across the batch: mean 0, variance 1.
  Tensor<double> x({2, 1, 1, 2}, {-1.0, 1.0, 1.0, -1.0});
  BatchNormState<double> bn = BatchNormState<double>::create(1);
  bn.mode = LayerMode::Training;
  Tensor<double> out = batchnorm_forward(x, bn);
  for (Index i = 0; i < x.size(); ++i) CHECK(out[i] == doctest::Approx(x[i]).epsilon(1e-4));
}

TEST_CASE("batchnorm normalizes {1,3} to {-1,+1} as epsilon shrinks") {
  Tensor<double> x({2, 1, 1, 1}, {1.0, 3.0});
  BatchNormState<double> bn = BatchNormState<double>::create(1);
  bn.mode = LayerMode::Training;
  bn.epsilon = 1e-12;
  Tensor<double> out = batchnorm_forward(x, bn);
  CHECK(out[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("batchnorm inference applies the running-stat affine map") {
  Tensor<double> x({1, 1, 1, 3}, {-1.0, 0.0, 2.0});
  BatchNormState<double> bn = BatchNormState<double>::create(1);
  bn.gamma[0] = 2.0;
  bn.beta[0] = 1.0;
  bn.mode = LayerMode::Inference;
  Tensor<double> out = batchnorm_forward(x, bn);
  for (Index i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(2.0 * x[i] + 1.0).epsilon(1e-4));
}

TEST_CASE("batchnorm rejects a batch of one in training mode") {
  Tensor<float> x({1, 2, 2, 2});
  BatchNormState<float> bn = BatchNormState<float>::create(2);
  bn.mode = LayerMode::Training;
  CHECK_THROWS_AS(batchnorm_forward(x, bn), ConfigError);
}

TEST_CASE("batchnorm training output is standardized per map before gamma/beta") {
  std::mt19937_64 rng(11);
  Tensor<double> x = random_tensor<double>({4, 3, 5, 6}, rng, 2.5);
  x.array() += 1.3;
  BatchNormState<double> bn = BatchNormState<double>::create(3);
  bn.mode = LayerMode::Training;
  Tensor<double> out = batchnorm_forward(x, bn);
  const Index plane = 5 * 6;
  for (Index k = 0; k < 3; ++k) {
    double sum = 0, sq = 0;
    for (Index b = 0; b < 4; ++b)
      for (Index i = 0; i < plane; ++i) {
        const double v = out[(b * 3 + k) * plane + i];
        sum += v;
        sq += v * v;
      }
    const double n = 4.0 * plane;
    CHECK(std::abs(sum / n) < 1e-6);
    CHECK(std::abs(sq / n - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm updates running statistics by exponential moving average") {
  Tensor<double> x({2, 1, 1, 1}, {1.0, 3.0});  // batch mean 2, biased var 1
  BatchNormState<double> bn = BatchNormState<double>::create(1);
  bn.mode = LayerMode::Training;
  bn.momentum = 0.9;
  batchnorm_forward(x, bn);
  CHECK(bn.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
  CHECK(bn.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0));

  batchnorm_forward(x, bn, nullptr, /*update_running=*/false);
  CHECK(bn.running_mean[0] == doctest::Approx(0.2));  // frozen
}

TEST_CASE("batchnorm backward matches finite differences in both modes") {
  std::mt19937_64 rng(12);
  for (const LayerMode mode : {LayerMode::Training, LayerMode::Inference}) {
    Tensor<double> x = random_tensor<double>({3, 2, 2, 3}, rng);
    BatchNormState<double> bn = random_bn(2, rng);
    bn.mode = mode;
    Tensor<double> seed = random_tensor<double>(x.shape(), rng);

    auto loss = [&]() {
      BatchNormState<double> state = bn;  // forward must not mutate between evaluations
      Tensor<double> out = batchnorm_forward(x, state, nullptr, false);
      return double((out.array() * seed.array()).sum());
    };
    BatchNormCache<double> cache;
    BatchNormState<double> state = bn;
    batchnorm_forward(x, state, &cache, false);
    BatchNormGrads<double> grads = batchnorm_backward(seed, state, cache);

    CHECK(finite_difference_max_err(x, grads.input, loss) < 1e-6);
    CHECK(finite_difference_max_err(bn.gamma, grads.gamma, loss) < 1e-6);
    CHECK(finite_difference_max_err(bn.beta, grads.beta, loss) < 1e-6);
  }
}

TEST_CASE("batchnorm backward without a cache is a state error") {
  BatchNormState<double> bn = BatchNormState<double>::create(1);
  BatchNormCache<double> cache;
  CHECK_THROWS_AS(batchnorm_backward(Tensor<double>({1, 1, 1, 1}), bn, cache), StateError);
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

TEST_CASE("dropout with rate 0 and in inference mode is the identity") {
  std::mt19937_64 rng(13);
  Tensor<float> x = random_tensor<float>({100}, rng);

  DropoutState<float> zero_rate(0.0f, 1);
  zero_rate.mode = LayerMode::Training;
  CHECK(dropout_forward(x, zero_rate) == x);

  DropoutState<float> inference(0.9f, 1);
  inference.mode = LayerMode::Inference;
  CHECK(dropout_forward(x, inference) == x);
}

TEST_CASE("dropout rejects rate >= 1") {
  DropoutState<float> state(1.0f, 1);
  state.mode = LayerMode::Training;
  CHECK_THROWS_AS(dropout_forward(Tensor<float>({4}), state), ConfigError);
}

TEST_CASE("dropout statistical oracle: survivor fraction and mean preserved") {
  const Index n = 1000000;
  Tensor<double> x = Tensor<double>::full({n}, 1.0);
  DropoutState<double> state(0.5, 99);
  state.mode = LayerMode::Training;
  Tensor<double> mask;
  Tensor<double> out = dropout_forward(x, state, &mask);

  Index survivors = 0;
  for (Index i = 0; i < n; ++i) survivors += mask[i] != 0.0 ? 1 : 0;
  CHECK(double(survivors) / double(n) == doctest::Approx(0.5).epsilon(0.02));
  CHECK(out.vec().sum() / double(n) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("dropout backward routes gradients through the cached mask") {
  std::mt19937_64 rng(14);
  Tensor<double> x = random_tensor<double>({64}, rng);
  DropoutState<double> state(0.25, 7);
  state.mode = LayerMode::Training;
  Tensor<double> mask;
  Tensor<double> out = dropout_forward(x, state, &mask);
  for (Index i = 0; i < x.size(); ++i) CHECK(out[i] == x[i] * mask[i]);

  Tensor<double> grad = random_tensor<double>({64}, rng);
  Tensor<double> back = dropout_backward(grad, mask);
  for (Index i = 0; i < x.size(); ++i) CHECK(back[i] == grad[i] * mask[i]);
}

TEST_CASE("dropout is deterministic given its seed") {
  Tensor<float> x = Tensor<float>::full({256}, 1.0f);
  DropoutState<float> a(0.5f, 1234), b(0.5f, 1234);
  a.mode = b.mode = LayerMode::Training;
  CHECK(dropout_forward(x, a) == dropout_forward(x, b));
}

// ---------------------------------------------------------------------------
// Recurrent convolutional layer
// ---------------------------------------------------------------------------

TEST_CASE("rcl with T=0 degenerates to the feed-forward layer") {
  std::mt19937_64 rng(15);
  Tensor<double> u = random_tensor<double>({1, 2, 3, 4}, rng);
  RclParams<double> params = random_rcl(3, 2, 0, rng);
  BatchNormState<double> bn = random_bn(3, rng);

  Tensor<double> out = rcl_forward(u, params, &bn, Activation::ReLU);
  Tensor<double> ff = conv2d_batched(u, params.ff_kernels, Tensor<double>({3}), ConvSpec{});
  BatchNormState<double> bn2 = bn;
  Tensor<double> expected = batchnorm_forward(ff, bn2);
  apply_activation(expected, Activation::ReLU);
  CHECK(out == expected);
}

TEST_CASE("rcl with zero recurrent weights collapses to feed-forward plus bias") {
  std::mt19937_64 rng(16);
  Tensor<double> u = random_tensor<double>({2, 2, 3, 3}, rng);
  for (int iterations : {1, 2, 3}) {
    RclParams<double> params = random_rcl(2, 2, iterations, rng);
    params.rec_kernels.set_zero();
    Tensor<double> out = rcl_forward(u, params, nullptr, Activation::Identity);
    Tensor<double> expected = conv2d_batched(u, params.ff_kernels, params.bias, ConvSpec{});
    for (Index i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(expected[i]));
  }
}

TEST_CASE("rcl scalar recurrence by hand: 1, 1.5, 1.75") {
  RclParams<double> params;
  params.ff_kernels = Tensor<double>({1, 1, 1, 1}, {1.0});
  params.rec_kernels = Tensor<double>({1, 1, 1, 1}, {0.5});
  params.bias = Tensor<double>({1});
  params.iterations = 2;
  Tensor<double> u = Tensor<double>::full({1, 1, 1, 1}, 1.0);

  RclCache<double> cache;
  Tensor<double> out = rcl_forward(u, params, nullptr, Activation::Identity, &cache);
  CHECK(cache.state[0][0] == doctest::Approx(1.0));
  CHECK(cache.state[1][0] == doctest::Approx(1.5));
  CHECK(cache.state[2][0] == doctest::Approx(1.75));
  CHECK(out[0] == doctest::Approx(1.75));
}

TEST_CASE("rcl rejects map-count mismatches and missing caches") {
  RclParams<double> params;
  params.ff_kernels = Tensor<double>({2, 1, 1, 1});
  params.rec_kernels = Tensor<double>({3, 3, 3, 3});
  params.bias = Tensor<double>({2});
  params.iterations = 1;
  Tensor<double> u({1, 1, 4, 4});
  CHECK_THROWS_AS(rcl_forward(u, params, nullptr, Activation::ReLU), DimensionError);

  RclParams<double> ok;
  ok.ff_kernels = Tensor<double>({1, 1, 1, 1});
  ok.rec_kernels = Tensor<double>({1, 1, 3, 3});
  ok.bias = Tensor<double>({1});
  RclCache<double> cache;  // never filled
  CHECK_THROWS_AS(rcl_backward(Tensor<double>({1, 1, 4, 4}), ok, nullptr, Activation::ReLU, cache),
                  StateError);
}

TEST_CASE("rcl backward with T=0 equals the plain conv backward") {
  std::mt19937_64 rng(17);
  Tensor<double> u = random_tensor<double>({2, 3, 4, 4}, rng);
  RclParams<double> params = random_rcl(2, 3, 0, rng);

  RclCache<double> cache;
  rcl_forward(u, params, nullptr, Activation::Identity, &cache);
  Tensor<double> g = random_tensor<double>({2, 2, 4, 4}, rng);
  RclGrads<double> grads = rcl_backward(g, params, nullptr, Activation::Identity, cache);

  Conv2dGrads<double> plain = conv2d_backward_batched(u, params.ff_kernels, ConvSpec{}, g);
  for (Index i = 0; i < grads.ff_kernels.size(); ++i)
    CHECK(grads.ff_kernels[i] == doctest::Approx(plain.kernels[i]));
  for (Index i = 0; i < grads.input.size(); ++i)
    CHECK(grads.input[i] == doctest::Approx(plain.input[i]));
}

TEST_CASE("rcl with zero recurrent weights: shared ff gradient matches the unfolded oracle") {
  std::mt19937_64 rng(18);
  Tensor<double> u = random_tensor<double>({1, 2, 3, 3}, rng);
  RclParams<double> params = random_rcl(2, 2, 2, rng);
  params.rec_kernels.set_zero();

  RclCache<double> cache;
  rcl_forward(u, params, nullptr, Activation::Identity, &cache);
  Tensor<double> g = random_tensor<double>({1, 2, 3, 3}, rng);
  RclGrads<double> grads = rcl_backward(g, params, nullptr, Activation::Identity, cache);

  auto stack = oracles::UnrolledStack<double>::from_shared(params, nullptr, Activation::Identity);
  stack.forward(u);
  auto oracle = stack.backward(g);
  Tensor<double> ff_sum(params.ff_kernels.shape());
  for (const auto& copy : oracle.ff) ff_sum.array() += copy.array();
  for (Index i = 0; i < ff_sum.size(); ++i)
    CHECK(grads.ff_kernels[i] == doctest::Approx(ff_sum[i]).epsilon(1e-10));
}

TEST_CASE("pass-through recurrence accumulates the feed-forward gradient T+1 times") {
  // Identity recurrent kernel and identity activation: every unrolled step
  // receives the full output gradient, so the shared 1x1 gradient is exactly
  // (T+1) times the single-layer gradient.
  std::mt19937_64 rng(19);
  const int iterations = 3;
  Tensor<double> u = random_tensor<double>({1, 2, 3, 3}, rng);
  RclParams<double> params = random_rcl(2, 2, iterations, rng);
  params.rec_kernels.set_zero();
  for (Index k = 0; k < 2; ++k) params.rec_kernels(k, k, 1, 1) = 1.0;  // center tap
  params.bias.set_zero();

  RclCache<double> cache;
  rcl_forward(u, params, nullptr, Activation::Identity, &cache);
  Tensor<double> g = random_tensor<double>({1, 2, 3, 3}, rng);
  RclGrads<double> grads = rcl_backward(g, params, nullptr, Activation::Identity, cache);

  Conv2dGrads<double> single = conv2d_backward_batched(u, params.ff_kernels, ConvSpec{}, g);
  for (Index i = 0; i < grads.ff_kernels.size(); ++i)
    CHECK(grads.ff_kernels[i] ==
          doctest::Approx(double(iterations + 1) * single.kernels[i]).epsilon(1e-10));
}

TEST_CASE("rcl backward matches central finite differences (with batch norm)") {
  std::mt19937_64 rng(20);
  Tensor<double> u = random_tensor<double>({2, 2, 3, 4}, rng);
  RclParams<double> params = random_rcl(2, 2, 2, rng);
  BatchNormState<double> bn = random_bn(2, rng);
  bn.mode = LayerMode::Training;
  Tensor<double> seed = random_tensor<double>({2, 2, 3, 4}, rng);

  auto loss = [&]() {
    BatchNormState<double> state = bn;
    Tensor<double> out = rcl_forward(u, params, &state, Activation::ReLU, nullptr, false);
    return double((out.array() * seed.array()).sum());
  };

  RclCache<double> cache;
  BatchNormState<double> state = bn;
  rcl_forward(u, params, &state, Activation::ReLU, &cache, false);
  RclGrads<double> grads = rcl_backward(seed, params, &state, Activation::ReLU, cache);

  CHECK(finite_difference_max_err(u, grads.input, loss) < 1e-6);
  CHECK(finite_difference_max_err(params.ff_kernels, grads.ff_kernels, loss) < 1e-6);
  CHECK(finite_difference_max_err(params.rec_kernels, grads.rec_kernels, loss) < 1e-6);
  CHECK(finite_difference_max_err(params.bias, grads.bias, loss) < 1e-6);
  CHECK(finite_difference_max_err(bn.gamma, grads.gamma, loss) < 1e-6);
  CHECK(finite_difference_max_err(bn.beta, grads.beta, loss) < 1e-6);
}

TEST_CASE("unfold equivalence: forward output equals the tied-weight stack") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    const int iterations = 1 + trial % 4;
    Tensor<double> u = random_tensor<double>({1, 2, 3, 4}, rng);
    RclParams<double> params = random_rcl(3, 2, iterations, rng);
    BatchNormState<double> bn = random_bn(3, rng);

    BatchNormState<double> state = bn;
    Tensor<double> rcl_out = rcl_forward(u, params, &state, Activation::ReLU);
    auto stack = oracles::UnrolledStack<double>::from_shared(params, &bn, Activation::ReLU);
    Tensor<double> stack_out = stack.forward(u);
    REQUIRE(rcl_out.shape() == stack_out.shape());
    for (Index i = 0; i < rcl_out.size(); ++i)
      CHECK(std::abs(rcl_out[i] - stack_out[i]) < 1e-12);
  }
}

TEST_CASE("shared-weight gradients are the sums of per-copy gradients") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const int iterations = 1 + trial % 3;
    Tensor<double> u = random_tensor<double>({2, 2, 3, 3}, rng);
    RclParams<double> params = random_rcl(2, 2, iterations, rng);
    BatchNormState<double> bn = random_bn(2, rng);
    Tensor<double> g = random_tensor<double>({2, 2, 3, 3}, rng);

    BatchNormState<double> state = bn;
    RclCache<double> cache;
    rcl_forward(u, params, &state, Activation::ReLU, &cache);
    RclGrads<double> grads = rcl_backward(g, params, &state, Activation::ReLU, cache);

    auto stack = oracles::UnrolledStack<double>::from_shared(params, &bn, Activation::ReLU);
    stack.forward(u);
    auto oracle = stack.backward(g);

    Tensor<double> ff_sum(params.ff_kernels.shape());
    for (const auto& copy : oracle.ff) ff_sum.array() += copy.array();
    Tensor<double> rec_sum(params.rec_kernels.shape());
    for (const auto& copy : oracle.rec) rec_sum.array() += copy.array();
    Tensor<double> bias_sum({params.bias.size()});
    for (const auto& copy : oracle.bias) bias_sum.array() += copy.array();

    for (Index i = 0; i < ff_sum.size(); ++i)
      CHECK(std::abs(grads.ff_kernels[i] - ff_sum[i]) < 1e-10);
    for (Index i = 0; i < rec_sum.size(); ++i)
      CHECK(std::abs(grads.rec_kernels[i] - rec_sum[i]) < 1e-10);
    for (Index i = 0; i < bias_sum.size(); ++i)
      CHECK(std::abs(grads.bias[i] - bias_sum[i]) < 1e-10);
  }
}

TEST_CASE("unrolled path lengths are exactly {1..T+1}") {
  for (int iterations : {0, 1, 2, 3, 5}) {
    std::set<int> expected;
    for (int len = 1; len <= iterations + 1; ++len) expected.insert(len);
    CHECK(oracles::unrolled_path_lengths(iterations) == expected);
  }
}
