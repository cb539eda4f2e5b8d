#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "rclnet/kernels.hpp"

namespace rclnet {

enum class LayerMode { Training, Inference };

enum class Activation { ReLU, Identity };

template <typename Scalar>
void apply_activation(Tensor<Scalar>& x, Activation act) {
  if (act == Activation::ReLU) x.array() = x.array().max(Scalar(0));
}

/// Gradient through the activation, expressed in terms of the pre-activation.
template <typename Scalar>
void activation_backward_inplace(Tensor<Scalar>& grad, const Tensor<Scalar>& pre_act,
                                 Activation act) {
  if (act == Activation::ReLU)
    grad.array() *= (pre_act.array() > Scalar(0)).template cast<Scalar>();
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
  Scalar epsilon = Scalar(1e-5);
  // Fraction of the old running statistic kept per update.
  Scalar momentum = Scalar(0.99);
  LayerMode mode = LayerMode::Inference;

  static BatchNormState create(Index maps) {
    BatchNormState s;
    s.gamma = Tensor<Scalar>::full({maps}, Scalar(1));
    s.beta = Tensor<Scalar>::zeros({maps});
    s.running_mean = Tensor<Scalar>::zeros({maps});
    s.running_var = Tensor<Scalar>::full({maps}, Scalar(1));
    return s;
  }
};

template <typename Scalar>
struct BatchNormCache {
  Tensor<Scalar> xhat;            // normalized input, same shape as x
  std::vector<Scalar> inv_std;    // per map
  Index count = 0;                // elements per map (B*H*W)
  bool training = false;
  bool valid = false;
};

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
};

/// Normalizes each map over batch and spatial positions. Training mode uses
/// batch statistics and (optionally) updates the running averages; inference
/// mode uses the running statistics.
template <typename Scalar>
Tensor<Scalar> batchnorm_forward(const Tensor<Scalar>& x, BatchNormState<Scalar>& state,
                                 BatchNormCache<Scalar>* cache = nullptr,
                                 bool update_running = true) {
  if (x.rank() != 4)
    throw DimensionError("batchnorm input must be BxKxHxW, got " + shape_to_string(x.shape()));
  const Index batch = x.extent(0);
  const Index maps = x.extent(1);
  const Index plane = x.extent(2) * x.extent(3);
  if (maps != state.gamma.size())
    throw DimensionError("batchnorm maps mismatch: input has " + std::to_string(maps) +
                         ", state has " + std::to_string(state.gamma.size()));
  const bool training = state.mode == LayerMode::Training;
  if (training && batch < 2)
    throw ConfigError("batchnorm requires batch size >= 2 in training mode, got " +
                      std::to_string(batch));

  const Index count = batch * plane;
  Tensor<Scalar> out(x.shape());
  if (cache) {
    cache->xhat = Tensor<Scalar>(x.shape());
    cache->inv_std.assign(static_cast<std::size_t>(maps), Scalar(0));
    cache->count = count;
    cache->training = training;
    cache->valid = true;
  }

  for (Index k = 0; k < maps; ++k) {
    Scalar mean, var;
    if (training) {
      Scalar sum = 0, sq = 0;
      for (Index b = 0; b < batch; ++b) {
        const Scalar* src = x.data() + (b * maps + k) * plane;
        for (Index i = 0; i < plane; ++i) {
          sum += src[i];
          sq += src[i] * src[i];
        }
      }
      mean = sum / Scalar(count);
      var = sq / Scalar(count) - mean * mean;
      if (var < 0) var = 0;  // guard against cancellation
      if (update_running) {
        state.running_mean[k] = state.momentum * state.running_mean[k] + (1 - state.momentum) * mean;
        state.running_var[k] = state.momentum * state.running_var[k] + (1 - state.momentum) * var;
      }
    } else {
      mean = state.running_mean[k];
      var = state.running_var[k];
    }
    const Scalar inv_std = Scalar(1) / std::sqrt(var + state.epsilon);
    const Scalar gamma = state.gamma[k];
    const Scalar beta = state.beta[k];
    if (cache) cache->inv_std[static_cast<std::size_t>(k)] = inv_std;
    for (Index b = 0; b < batch; ++b) {
      const Scalar* src = x.data() + (b * maps + k) * plane;
      Scalar* dst = out.data() + (b * maps + k) * plane;
      Scalar* xh = cache ? cache->xhat.data() + (b * maps + k) * plane : nullptr;
      for (Index i = 0; i < plane; ++i) {
        const Scalar normed = (src[i] - mean) * inv_std;
        if (xh) xh[i] = normed;
        dst[i] = gamma * normed + beta;
      }
    }
  }
  return out;
}

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_backward(const Tensor<Scalar>& out_grad,
                                          const BatchNormState<Scalar>& state,
                                          const BatchNormCache<Scalar>& cache) {
  if (!cache.valid) throw StateError("batchnorm_backward called without a forward cache");
  if (!cache.xhat.same_shape(out_grad))
    throw DimensionError("batchnorm_backward gradient shape " + shape_to_string(out_grad.shape()) +
                         " does not match cached forward shape");
  const Index batch = out_grad.extent(0);
  const Index maps = out_grad.extent(1);
  const Index plane = out_grad.extent(2) * out_grad.extent(3);
  const Scalar n = Scalar(cache.count);

  BatchNormGrads<Scalar> grads{Tensor<Scalar>(out_grad.shape()), Tensor<Scalar>({maps}),
                               Tensor<Scalar>({maps})};
  for (Index k = 0; k < maps; ++k) {
    Scalar sum_dy = 0, sum_dy_xhat = 0;
    for (Index b = 0; b < batch; ++b) {
      const Scalar* dy = out_grad.data() + (b * maps + k) * plane;
      const Scalar* xh = cache.xhat.data() + (b * maps + k) * plane;
      for (Index i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xh[i];
      }
    }
    grads.beta[k] = sum_dy;
    grads.gamma[k] = sum_dy_xhat;
    const Scalar scale = state.gamma[k] * cache.inv_std[static_cast<std::size_t>(k)];
    for (Index b = 0; b < batch; ++b) {
      const Scalar* dy = out_grad.data() + (b * maps + k) * plane;
      const Scalar* xh = cache.xhat.data() + (b * maps + k) * plane;
      Scalar* dx = grads.input.data() + (b * maps + k) * plane;
      if (cache.training) {
        for (Index i = 0; i < plane; ++i)
          dx[i] = scale * (dy[i] - sum_dy / n - xh[i] * sum_dy_xhat / n);
      } else {
        for (Index i = 0; i < plane; ++i) dx[i] = scale * dy[i];
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

template <typename Scalar>
struct DropoutState {
  Scalar rate = Scalar(0.5);
  LayerMode mode = LayerMode::Inference;
  std::uint64_t rng_seed = 0;
  std::mt19937_64 rng;

  DropoutState() : rng(0) {}
  DropoutState(Scalar rate_, std::uint64_t seed) : rate(rate_), rng_seed(seed), rng(seed) {}
};

/// Inverted dropout: each unit is zeroed with probability `rate` and survivors
/// are scaled by 1/(1-rate). Identity in inference mode. The mask written to
/// `mask_cache` already carries the survivor scale.
template <typename Scalar>
Tensor<Scalar> dropout_forward(const Tensor<Scalar>& x, DropoutState<Scalar>& state,
                               Tensor<Scalar>* mask_cache = nullptr) {
  if (!(state.rate >= Scalar(0) && state.rate < Scalar(1)))
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(double(state.rate)));
  if (state.mode == LayerMode::Inference || state.rate == Scalar(0)) {
    if (mask_cache) *mask_cache = Tensor<Scalar>::full(x.shape(), Scalar(1));
    return x;
  }
  const Scalar keep_scale = Scalar(1) / (Scalar(1) - state.rate);
  Tensor<Scalar> mask(x.shape());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (Index i = 0; i < mask.size(); ++i)
    mask[i] = uniform(state.rng) < double(state.rate) ? Scalar(0) : keep_scale;
  Tensor<Scalar> out(x.shape());
  out.array() = x.array() * mask.array();
  if (mask_cache) *mask_cache = std::move(mask);
  return out;
}

template <typename Scalar>
Tensor<Scalar> dropout_backward(const Tensor<Scalar>& out_grad, const Tensor<Scalar>& mask) {
  if (!out_grad.same_shape(mask))
    throw StateError("dropout_backward: mask cache does not match gradient shape");
  Tensor<Scalar> grad(out_grad.shape());
  grad.array() = out_grad.array() * mask.array();
  return grad;
}

// ---------------------------------------------------------------------------
// Recurrent convolutional layer
// ---------------------------------------------------------------------------

/// Parameters of one recurrent convolutional layer: a 1x1 feed-forward map, a
/// square recurrent map shared across all iterations, the recurrent bias and
/// the iteration count T.
template <typename Scalar>
struct RclParams {
  Tensor<Scalar> ff_kernels;   // K x C x 1 x 1
  Tensor<Scalar> rec_kernels;  // K x K x k x k, odd k, state-preserving
  Tensor<Scalar> bias;         // K
  int iterations = 3;          // T
};

template <typename Scalar>
ConvSpec rcl_recurrent_spec(const RclParams<Scalar>& params) {
  const int k_h = static_cast<int>(params.rec_kernels.extent(2));
  const int k_w = static_cast<int>(params.rec_kernels.extent(3));
  // Zero pad keeps the spatial extent so state addition is well formed.
  return ConvSpec{k_h, k_w, 1, 1, (k_h - 1) / 2, (k_w - 1) / 2};
}

template <typename Scalar>
void validate_rcl_params(const RclParams<Scalar>& params) {
  if (params.iterations < 0)
    throw ConfigError("rcl iteration count must be >= 0, got " +
                      std::to_string(params.iterations));
  if (params.ff_kernels.rank() != 4 || params.ff_kernels.extent(2) != 1 ||
      params.ff_kernels.extent(3) != 1)
    throw DimensionError("rcl feed-forward kernels must be KxCx1x1, got " +
                         shape_to_string(params.ff_kernels.shape()));
  if (params.rec_kernels.rank() != 4 || params.rec_kernels.extent(0) != params.rec_kernels.extent(1))
    throw DimensionError("rcl recurrent kernels must be state-preserving KxKxkxk, got " +
                         shape_to_string(params.rec_kernels.shape()));
  if (params.rec_kernels.extent(0) != params.ff_kernels.extent(0))
    throw DimensionError("rcl map-count mismatch: feed-forward produces " +
                         std::to_string(params.ff_kernels.extent(0)) + " maps, recurrent expects " +
                         std::to_string(params.rec_kernels.extent(0)));
  if (params.rec_kernels.extent(2) % 2 != 1 || params.rec_kernels.extent(3) % 2 != 1)
    throw ConfigError("rcl recurrent kernel extents must be odd to preserve spatial size");
  if (params.bias.size() != params.ff_kernels.extent(0))
    throw DimensionError("rcl bias length " + std::to_string(params.bias.size()) +
                         " != map count " + std::to_string(params.ff_kernels.extent(0)));
}

template <typename Scalar>
struct RclCache {
  Tensor<Scalar> input;                  // u
  Tensor<Scalar> ff_raw;                 // conv1x1(u) before normalization
  Tensor<Scalar> ff;                     // normalized feed-forward term
  BatchNormCache<Scalar> bn;
  std::vector<Tensor<Scalar>> pre_act;   // z_0 .. z_T
  std::vector<Tensor<Scalar>> state;     // x_0 .. x_T
  bool valid = false;
};

template <typename Scalar>
struct RclGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> ff_kernels;
  Tensor<Scalar> rec_kernels;
  Tensor<Scalar> bias;
  Tensor<Scalar> gamma;  // empty when no batch norm is attached
  Tensor<Scalar> beta;
};

/// Forward pass of the recurrent convolutional layer on a BxCxHxW batch.
///
///   f    = BN(conv1x1(u))        computed once, reused by every iteration
///   x(0) = act(f)
///   x(t) = act(f + conv_shared(x(t-1)) + bias)   for t = 1..T
///
/// Returns x(T). All intermediate states are cached for backward when `cache`
/// is given. `bn` may be null, in which case the feed-forward map is used raw.
template <typename Scalar>
Tensor<Scalar> rcl_forward(const Tensor<Scalar>& u, const RclParams<Scalar>& params,
                           BatchNormState<Scalar>* bn, Activation act,
                           RclCache<Scalar>* cache = nullptr, bool update_running = true) {
  validate_rcl_params(params);
  const ConvSpec ff_spec{};  // 1x1, stride 1, no pad
  const ConvSpec rec_spec = rcl_recurrent_spec(params);
  const Index maps = params.ff_kernels.extent(0);
  Tensor<Scalar> zero_bias({maps});

  Tensor<Scalar> ff_raw = conv2d_batched(u, params.ff_kernels, zero_bias, ff_spec);
  Tensor<Scalar> ff =
      bn ? batchnorm_forward(ff_raw, *bn, cache ? &cache->bn : nullptr, update_running) : ff_raw;

  std::vector<Tensor<Scalar>> pre_act;
  std::vector<Tensor<Scalar>> state;
  pre_act.reserve(static_cast<std::size_t>(params.iterations) + 1);
  state.reserve(static_cast<std::size_t>(params.iterations) + 1);

  pre_act.push_back(ff);
  Tensor<Scalar> x = ff;
  apply_activation(x, act);
  state.push_back(x);

  for (int t = 1; t <= params.iterations; ++t) {
    Tensor<Scalar> z = conv2d_batched(state.back(), params.rec_kernels, params.bias, rec_spec);
    z.array() += ff.array();
    pre_act.push_back(z);
    apply_activation(z, act);
    state.push_back(std::move(z));
  }

  Tensor<Scalar> out = state.back();
  if (cache) {
    cache->input = u;
    cache->ff_raw = std::move(ff_raw);
    cache->ff = std::move(ff);
    cache->pre_act = std::move(pre_act);
    cache->state = std::move(state);
    cache->valid = true;
  }
  return out;
}

/// Backpropagation through the unrolled iterations. Shared-weight gradients
/// (recurrent kernels, bias) accumulate across time steps; the feed-forward
/// path receives the sum of the gradients flowing into it from every step.
template <typename Scalar>
RclGrads<Scalar> rcl_backward(const Tensor<Scalar>& out_grad, const RclParams<Scalar>& params,
                              BatchNormState<Scalar>* bn, Activation act,
                              const RclCache<Scalar>& cache) {
  if (!cache.valid) throw StateError("rcl_backward called without a forward cache");
  const ConvSpec ff_spec{};
  const ConvSpec rec_spec = rcl_recurrent_spec(params);
  const int T = params.iterations;

  RclGrads<Scalar> grads;
  grads.rec_kernels = Tensor<Scalar>(params.rec_kernels.shape());
  grads.bias = Tensor<Scalar>({params.bias.size()});

  Tensor<Scalar> g = out_grad;                       // gradient w.r.t. x(t)
  Tensor<Scalar> d_ff(cache.ff.shape());             // accumulated gradient w.r.t. f
  for (int t = T; t >= 1; --t) {
    activation_backward_inplace(g, cache.pre_act[static_cast<std::size_t>(t)], act);
    d_ff.array() += g.array();
    Conv2dGrads<Scalar> rec =
        conv2d_backward_batched(cache.state[static_cast<std::size_t>(t - 1)], params.rec_kernels,
                                rec_spec, g);
    grads.rec_kernels.array() += rec.kernels.array();
    grads.bias.array() += rec.bias.array();
    g = std::move(rec.input);
  }
  activation_backward_inplace(g, cache.pre_act[0], act);
  d_ff.array() += g.array();

  Tensor<Scalar> d_ff_raw;
  if (bn) {
    BatchNormGrads<Scalar> bng = batchnorm_backward(d_ff, *bn, cache.bn);
    d_ff_raw = std::move(bng.input);
    grads.gamma = std::move(bng.gamma);
    grads.beta = std::move(bng.beta);
  } else {
    d_ff_raw = std::move(d_ff);
  }
  Conv2dGrads<Scalar> ff = conv2d_backward_batched(cache.input, params.ff_kernels, ff_spec, d_ff_raw);
  grads.ff_kernels = std::move(ff.kernels);
  grads.input = std::move(ff.input);
  return grads;
}

}  // namespace rclnet
