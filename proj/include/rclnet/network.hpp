#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rclnet/layers.hpp"

namespace rclnet {

enum class HeadKind { Regression, Classification };

/// Configuration of the layer stack: one plain convolution, `rcl_count`
/// recurrent convolutional layers with a max pooling after every stage, then
/// dropout and a dense head.
struct NetworkConfig {
  Index input_w = 713;
  Index input_h = 30;
  Index channels = 3;
  Index maps = 256;
  int rcl_count = 4;   // m
  int iterations = 3;  // T, shared by every recurrent layer
  std::vector<PoolSpec> pool_specs = {
      {4, 1, 4, 1}, {4, 1, 4, 1}, {4, 4, 4, 4}, {2, 2, 2, 2}, {1, 1, 1, 1}};
  HeadKind head = HeadKind::Regression;
  int class_count = 16;  // classification mode only
  double dropout_rate = 0.5;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.99;
  bool use_batchnorm = true;
  bool clamp_predictions = false;  // clamp inference outputs to [0, 15]

  Index output_size() const {
    return head == HeadKind::Regression ? input_h : static_cast<Index>(class_count);
  }

  /// The full-scale default configuration.
  static NetworkConfig full() { return NetworkConfig{}; }

  /// Desk-scale configuration used by verification runs and smoke training.
  static NetworkConfig reduced(Index w = 32, Index h = 8, Index maps = 8, int rcls = 2,
                               int iters = 2) {
    NetworkConfig cfg;
    cfg.input_w = w;
    cfg.input_h = h;
    cfg.maps = maps;
    cfg.rcl_count = rcls;
    cfg.iterations = iters;
    cfg.pool_specs.assign(static_cast<std::size_t>(rcls) + 1, PoolSpec{2, 2, 2, 2});
    cfg.pool_specs[0] = PoolSpec{2, 1, 2, 1};
    cfg.dropout_rate = 0.0;
    return cfg;
  }
};

struct StageShape {
  std::string name;
  Index maps;
  Index h;
  Index w;
};

struct ShapeTrace {
  std::vector<StageShape> stages;
  Index flattened = 0;  // feature count entering the dense head
};

// The first convolution is fixed at 3x3, stride 1, pad 1 (extent preserving).
inline constexpr ConvSpec kInputConvSpec{3, 3, 1, 1, 1, 1};

/// Walks the configured stack and records the spatial extents after every
/// stage. Throws ConfigError naming the first layer whose output collapses.
inline ShapeTrace trace_shapes(const NetworkConfig& cfg) {
  if (cfg.input_w < 1 || cfg.input_h < 1 || cfg.channels < 1 || cfg.maps < 1)
    throw ConfigError("network input extents and map count must be >= 1");
  if (cfg.rcl_count < 1) throw ConfigError("network needs at least one recurrent layer");
  if (cfg.iterations < 0) throw ConfigError("iteration count must be >= 0");
  if (cfg.pool_specs.size() != static_cast<std::size_t>(cfg.rcl_count) + 1)
    throw ConfigError("expected " + std::to_string(cfg.rcl_count + 1) + " pool specs, got " +
                      std::to_string(cfg.pool_specs.size()));
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0))
    throw ConfigError("dropout rate must lie in [0, 1)");
  if (cfg.head == HeadKind::Classification && cfg.class_count < 2)
    throw ConfigError("classification head needs at least 2 classes");

  ShapeTrace trace;
  Index h = cfg.input_h;
  Index w = cfg.input_w;
  trace.stages.push_back({"input", cfg.channels, h, w});

  h = conv_output_extent(h, kInputConvSpec.kernel_h, kInputConvSpec.stride_h, kInputConvSpec.pad_h);
  w = conv_output_extent(w, kInputConvSpec.kernel_w, kInputConvSpec.stride_w, kInputConvSpec.pad_w);
  if (h < 1 || w < 1) throw ConfigError("convolution 1 yields non-positive extent");
  trace.stages.push_back({"convolution 1", cfg.maps, h, w});

  for (int i = 0; i <= cfg.rcl_count; ++i) {
    const PoolSpec& pool = cfg.pool_specs[static_cast<std::size_t>(i)];
    const std::string pool_name = "max pooling " + std::to_string(i + 1);
    if (pool.pool_w < 1 || pool.pool_h < 1 || pool.stride_w < 1 || pool.stride_h < 1)
      throw ConfigError(pool_name + " has a non-positive extent in its spec");
    h = pool_output_extent(h, pool.pool_h, pool.stride_h);
    w = pool_output_extent(w, pool.pool_w, pool.stride_w);
    if (h < 1 || w < 1)
      throw ConfigError(pool_name + " yields non-positive extent (" + std::to_string(h) + "x" +
                        std::to_string(w) + ")");
    trace.stages.push_back({pool_name, cfg.maps, h, w});
    if (i < cfg.rcl_count) {
      // Recurrent layers are extent preserving.
      trace.stages.push_back({"rcl " + std::to_string(i + 2), cfg.maps, h, w});
    }
  }
  trace.flattened = cfg.maps * h * w;
  return trace;
}

/// The single-frame counterpart of a configuration: window height 1 and no
/// pooling along the (now trivial) time axis. Everything else is unchanged.
inline NetworkConfig static_variant(NetworkConfig cfg) {
  cfg.input_h = 1;
  for (PoolSpec& p : cfg.pool_specs) {
    p.pool_h = 1;
    p.stride_h = 1;
  }
  return cfg;
}

/// One prediction per window row, aligned with frames n-H+1 .. n.
template <typename Scalar>
struct PredictionVector {
  std::vector<Scalar> values;
};

template <typename Scalar>
struct ParamView {
  std::string name;
  Tensor<Scalar>* value = nullptr;
  Tensor<Scalar>* grad = nullptr;  // null for non-trainable state
  bool weight_decay = false;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename Scalar>
struct LossResult {
  Scalar value = Scalar(0);
  Tensor<Scalar> grad;
};

/// L = (1/N) sum (pred - target)^2, gradient 2(pred - target)/N.
template <typename Scalar>
LossResult<Scalar> mse_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  if (!pred.same_shape(target))
    throw DimensionError("mse_loss shape mismatch: " + shape_to_string(pred.shape()) + " vs " +
                         shape_to_string(target.shape()));
  const Scalar n = Scalar(pred.size());
  LossResult<Scalar> result;
  result.grad = Tensor<Scalar>(pred.shape());
  result.grad.array() = pred.array() - target.array();
  result.value = result.grad.array().square().sum() / n;
  result.grad.array() *= Scalar(2) / n;
  return result;
}

/// MSE restricted to entries with a non-zero mask; padded window rows carry a
/// zero mask and contribute neither loss nor gradient.
template <typename Scalar>
LossResult<Scalar> masked_mse_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
                                   const std::vector<std::uint8_t>& valid) {
  if (!pred.same_shape(target))
    throw DimensionError("masked_mse_loss shape mismatch: " + shape_to_string(pred.shape()) +
                         " vs " + shape_to_string(target.shape()));
  if (static_cast<Index>(valid.size()) != pred.size())
    throw DimensionError("masked_mse_loss mask length " + std::to_string(valid.size()) +
                         " != prediction count " + std::to_string(pred.size()));
  Index count = 0;
  for (std::uint8_t v : valid) count += v ? 1 : 0;
  if (count == 0) throw ConfigError("masked_mse_loss: every entry is masked out");
  const Scalar n = Scalar(count);
  LossResult<Scalar> result;
  result.grad = Tensor<Scalar>(pred.shape());
  Scalar sum = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    if (!valid[static_cast<std::size_t>(i)]) continue;
    const Scalar d = pred[i] - target[i];
    sum += d * d;
    result.grad[i] = Scalar(2) * d / n;
  }
  result.value = sum / n;
  return result;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  Tensor<Scalar> probs(logits.shape());
  const Scalar peak = logits.array().maxCoeff();
  probs.array() = (logits.array() - peak).exp();
  probs.array() /= probs.array().sum();
  return probs;
}

/// Categorical cross-entropy -log(probs[target]); the returned gradient is
/// the combined softmax + cross-entropy gradient w.r.t. the logits,
/// probs - onehot(target).
template <typename Scalar>
LossResult<Scalar> cross_entropy_loss(const Tensor<Scalar>& probs, Index target) {
  if (target < 0 || target >= probs.size())
    throw ConfigError("cross_entropy_loss class index " + std::to_string(target) +
                      " out of range [0, " + std::to_string(probs.size()) + ")");
  if ((probs.array() <= Scalar(0)).any())
    throw NumericError("cross_entropy_loss requires strictly positive probabilities");
  if (std::abs(double(probs.array().sum()) - 1.0) > 1e-6)
    throw NumericError("cross_entropy_loss probabilities must sum to 1");
  LossResult<Scalar> result;
  result.value = -std::log(probs[target]);
  result.grad = probs;
  result.grad[target] -= Scalar(1);
  return result;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// The assembled stack. Forward/backward operate on BxCxHxW batches; training
/// mode caches every intermediate needed by the reverse pass. Inference over a
/// shared const network is safe from multiple threads; training forward and
/// backward require exclusive access.
template <typename Scalar>
class Network {
 public:
  Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg), trace_(trace_shapes(cfg)) {
    std::mt19937_64 rng(seed);
    c1_.kernels = init_tensor({cfg.maps, cfg.channels, 3, 3}, rng);
    c1_.bias = Tensor<Scalar>({cfg.maps});
    c1_.grad_kernels = Tensor<Scalar>(c1_.kernels.shape());
    c1_.grad_bias = Tensor<Scalar>({cfg.maps});
    bn1_ = BnBlock::create(cfg);

    rcls_.resize(static_cast<std::size_t>(cfg.rcl_count));
    for (auto& rcl : rcls_) {
      rcl.params.ff_kernels = init_tensor({cfg.maps, cfg.maps, 1, 1}, rng);
      rcl.params.rec_kernels = init_tensor({cfg.maps, cfg.maps, 3, 3}, rng);
      rcl.params.bias = Tensor<Scalar>({cfg.maps});
      rcl.params.iterations = cfg.iterations;
      rcl.grad_ff = Tensor<Scalar>(rcl.params.ff_kernels.shape());
      rcl.grad_rec = Tensor<Scalar>(rcl.params.rec_kernels.shape());
      rcl.grad_bias = Tensor<Scalar>({cfg.maps});
      rcl.bn = BnBlock::create(cfg);
    }

    const Index features = trace_.flattened;
    dense_.weights = init_tensor({cfg.output_size(), features}, rng);
    dense_.bias = Tensor<Scalar>({cfg.output_size()});
    dense_.grad_weights = Tensor<Scalar>(dense_.weights.shape());
    dense_.grad_bias = Tensor<Scalar>({cfg.output_size()});

    dropout_ = DropoutState<Scalar>(Scalar(cfg.dropout_rate), seed ^ 0x9e3779b97f4a7c15ull);
  }

  const NetworkConfig& config() const { return cfg_; }
  const ShapeTrace& shape_trace() const { return trace_; }
  Index flattened_features() const { return trace_.flattened; }

  Index parameter_count() {
    Index n = 0;
    for (const auto& p : parameters()) n += p.value->size();
    return n;
  }

  /// Forward pass over a BxCxHxW batch. Regression returns BxH predictions;
  /// classification returns BxC probabilities (backward still expects the
  /// gradient in logit space). `update_bn_stats` only matters in training
  /// mode; verification runs freeze the running statistics.
  Tensor<Scalar> forward(const Tensor<Scalar>& batch, LayerMode mode, bool update_bn_stats = true) {
    if (batch.rank() != 4 || batch.extent(1) != cfg_.channels || batch.extent(2) != cfg_.input_h ||
        batch.extent(3) != cfg_.input_w)
      throw DimensionError("network input must be Bx" + std::to_string(cfg_.channels) + "x" +
                           std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w) +
                           ", got " + shape_to_string(batch.shape()));
    const bool training = mode == LayerMode::Training;
    set_mode(mode);
    cache_valid_ = training;

    if (training) cache_.input = batch;
    Tensor<Scalar> x = conv2d_batched(batch, c1_.kernels, c1_.bias, kInputConvSpec);
    if (cfg_.use_batchnorm)
      x = batchnorm_forward(x, bn1_.state, training ? &cache_.bn1 : nullptr, update_bn_stats);
    if (training) cache_.act1_pre = x;
    apply_activation(x, Activation::ReLU);

    cache_.pools.resize(static_cast<std::size_t>(cfg_.rcl_count) + 1);
    cache_.rcls.resize(static_cast<std::size_t>(cfg_.rcl_count));
    for (int i = 0; i <= cfg_.rcl_count; ++i) {
      auto& pool_cache = cache_.pools[static_cast<std::size_t>(i)];
      if (training) pool_cache.input_shape = x.shape();
      PoolResult<Scalar> pooled = maxpool2d_batched(x, cfg_.pool_specs[static_cast<std::size_t>(i)]);
      x = std::move(pooled.output);
      if (training) pool_cache.argmax = std::move(pooled.argmax);
      if (i < cfg_.rcl_count) {
        auto& rcl = rcls_[static_cast<std::size_t>(i)];
        x = rcl_forward(x, rcl.params, cfg_.use_batchnorm ? &rcl.bn.state : nullptr,
                        Activation::ReLU, training ? &cache_.rcls[static_cast<std::size_t>(i)] : nullptr,
                        update_bn_stats);
      }
    }

    const Index batch_n = batch.extent(0);
    Tensor<Scalar> flat = x.reshaped({batch_n, trace_.flattened});
    flat = dropout_forward(flat, dropout_, training ? &cache_.dropout_mask : nullptr);
    if (training) cache_.dense_input = flat;

    Tensor<Scalar> out = dense_batched(flat, dense_.weights, dense_.bias);
    if (cfg_.head == HeadKind::Classification) {
      for (Index b = 0; b < batch_n; ++b) {
        typename Tensor<Scalar>::VecMap row(out.data() + b * cfg_.class_count, cfg_.class_count);
        const Scalar peak = row.maxCoeff();
        row = (row.array() - peak).exp();
        row /= row.sum();
      }
    }
    return out;
  }

  /// Single-window inference; applies the configured output clamp.
  PredictionVector<Scalar> predict(const Tensor<Scalar>& sample) {
    if (sample.rank() != 3)
      throw DimensionError("predict expects a CxHxW window, got " + shape_to_string(sample.shape()));
    Tensor<Scalar> batch = sample.reshaped({Index(1), sample.extent(0), sample.extent(1),
                                            sample.extent(2)});
    Tensor<Scalar> out = forward(batch, LayerMode::Inference);
    PredictionVector<Scalar> pred;
    pred.values.assign(out.data(), out.data() + out.size());
    if (cfg_.clamp_predictions && cfg_.head == HeadKind::Regression)
      for (Scalar& v : pred.values) v = std::min(Scalar(15), std::max(Scalar(0), v));
    return pred;
  }

  /// Reverse pass; `out_grad` is the loss gradient w.r.t. the dense output
  /// (logit space for the classification head). Fills every parameter's
  /// gradient tensor.
  void backward(const Tensor<Scalar>& out_grad) {
    if (!cache_valid_) throw StateError("backward called without a training-mode forward");
    const Index batch_n = out_grad.extent(0);
    if (out_grad.rank() != 2 || out_grad.extent(1) != cfg_.output_size() ||
        batch_n != cache_.dense_input.extent(0))
      throw DimensionError("backward gradient " + shape_to_string(out_grad.shape()) +
                           " does not match network output");

    DenseGrads<Scalar> dg = dense_backward_batched(cache_.dense_input, dense_.weights, out_grad);
    dense_.grad_weights = std::move(dg.weights);
    dense_.grad_bias = std::move(dg.bias);
    Tensor<Scalar> g = dropout_backward(dg.input, cache_.dropout_mask);

    const auto& last_stage = trace_.stages.back();
    g = g.reshaped({batch_n, cfg_.maps, last_stage.h, last_stage.w});

    for (int i = cfg_.rcl_count; i >= 0; --i) {
      auto& pool_cache = cache_.pools[static_cast<std::size_t>(i)];
      if (i < cfg_.rcl_count) {
        auto& rcl = rcls_[static_cast<std::size_t>(i)];
        RclGrads<Scalar> rg =
            rcl_backward(g, rcl.params, cfg_.use_batchnorm ? &rcl.bn.state : nullptr,
                         Activation::ReLU, cache_.rcls[static_cast<std::size_t>(i)]);
        rcl.grad_ff = std::move(rg.ff_kernels);
        rcl.grad_rec = std::move(rg.rec_kernels);
        rcl.grad_bias = std::move(rg.bias);
        if (cfg_.use_batchnorm) {
          rcl.bn.grad_gamma = std::move(rg.gamma);
          rcl.bn.grad_beta = std::move(rg.beta);
        }
        g = std::move(rg.input);
      }
      g = maxpool2d_backward(pool_cache.input_shape, pool_cache.argmax, g);
    }

    activation_backward_inplace(g, cache_.act1_pre, Activation::ReLU);
    if (cfg_.use_batchnorm) {
      BatchNormGrads<Scalar> bg = batchnorm_backward(g, bn1_.state, cache_.bn1);
      bn1_.grad_gamma = std::move(bg.gamma);
      bn1_.grad_beta = std::move(bg.beta);
      g = std::move(bg.input);
    }
    Conv2dGrads<Scalar> cg = conv2d_backward_batched(cache_.input, c1_.kernels, kInputConvSpec, g);
    c1_.grad_kernels = std::move(cg.kernels);
    c1_.grad_bias = std::move(cg.bias);
  }

  void zero_grads() {
    for (auto& p : parameters())
      if (p.grad) p.grad->set_zero();
  }

  /// Trainable parameters with their gradients, in declaration order.
  std::vector<ParamView<Scalar>> parameters() {
    std::vector<ParamView<Scalar>> views;
    views.push_back({"c1.kernels", &c1_.kernels, &c1_.grad_kernels, true});
    views.push_back({"c1.bias", &c1_.bias, &c1_.grad_bias, false});
    if (cfg_.use_batchnorm) {
      views.push_back({"bn1.gamma", &bn1_.state.gamma, &bn1_.grad_gamma, false});
      views.push_back({"bn1.beta", &bn1_.state.beta, &bn1_.grad_beta, false});
    }
    for (std::size_t i = 0; i < rcls_.size(); ++i) {
      const std::string prefix = "rcl" + std::to_string(i + 2) + ".";
      auto& rcl = rcls_[i];
      views.push_back({prefix + "ff_kernels", &rcl.params.ff_kernels, &rcl.grad_ff, true});
      views.push_back({prefix + "rec_kernels", &rcl.params.rec_kernels, &rcl.grad_rec, true});
      views.push_back({prefix + "bias", &rcl.params.bias, &rcl.grad_bias, false});
      if (cfg_.use_batchnorm) {
        views.push_back({prefix + "gamma", &rcl.bn.state.gamma, &rcl.bn.grad_gamma, false});
        views.push_back({prefix + "beta", &rcl.bn.state.beta, &rcl.bn.grad_beta, false});
      }
    }
    views.push_back({"dense.weights", &dense_.weights, &dense_.grad_weights, true});
    views.push_back({"dense.bias", &dense_.bias, &dense_.grad_bias, false});
    return views;
  }

  /// Everything a checkpoint persists: the trainable parameters plus the
  /// batch-norm running statistics, in declaration order.
  std::vector<ParamView<Scalar>> state_tensors() {
    std::vector<ParamView<Scalar>> views;
    auto add_bn_stats = [&](const std::string& prefix, BnBlock& bn) {
      views.push_back({prefix + "running_mean", &bn.state.running_mean, nullptr, false});
      views.push_back({prefix + "running_var", &bn.state.running_var, nullptr, false});
    };
    views.push_back({"c1.kernels", &c1_.kernels, &c1_.grad_kernels, true});
    views.push_back({"c1.bias", &c1_.bias, &c1_.grad_bias, false});
    if (cfg_.use_batchnorm) {
      views.push_back({"bn1.gamma", &bn1_.state.gamma, &bn1_.grad_gamma, false});
      views.push_back({"bn1.beta", &bn1_.state.beta, &bn1_.grad_beta, false});
      add_bn_stats("bn1.", bn1_);
    }
    for (std::size_t i = 0; i < rcls_.size(); ++i) {
      const std::string prefix = "rcl" + std::to_string(i + 2) + ".";
      auto& rcl = rcls_[i];
      views.push_back({prefix + "ff_kernels", &rcl.params.ff_kernels, &rcl.grad_ff, true});
      views.push_back({prefix + "rec_kernels", &rcl.params.rec_kernels, &rcl.grad_rec, true});
      views.push_back({prefix + "bias", &rcl.params.bias, &rcl.grad_bias, false});
      if (cfg_.use_batchnorm) {
        views.push_back({prefix + "gamma", &rcl.bn.state.gamma, &rcl.bn.grad_gamma, false});
        views.push_back({prefix + "beta", &rcl.bn.state.beta, &rcl.bn.grad_beta, false});
        add_bn_stats(prefix, rcl.bn);
      }
    }
    views.push_back({"dense.weights", &dense_.weights, &dense_.grad_weights, true});
    views.push_back({"dense.bias", &dense_.bias, &dense_.grad_bias, false});
    return views;
  }

 private:
  struct BnBlock {
    BatchNormState<Scalar> state;
    Tensor<Scalar> grad_gamma;
    Tensor<Scalar> grad_beta;

    static BnBlock create(const NetworkConfig& cfg) {
      BnBlock block;
      block.state = BatchNormState<Scalar>::create(cfg.maps);
      block.state.epsilon = Scalar(cfg.bn_epsilon);
      block.state.momentum = Scalar(cfg.bn_momentum);
      block.grad_gamma = Tensor<Scalar>({cfg.maps});
      block.grad_beta = Tensor<Scalar>({cfg.maps});
      return block;
    }
  };

  struct ConvBlock {
    Tensor<Scalar> kernels, bias, grad_kernels, grad_bias;
  };

  struct RclBlock {
    RclParams<Scalar> params;
    Tensor<Scalar> grad_ff, grad_rec, grad_bias;
    BnBlock bn;
  };

  struct DenseBlock {
    Tensor<Scalar> weights, bias, grad_weights, grad_bias;
  };

  struct PoolCache {
    Shape input_shape;
    std::vector<Index> argmax;
  };

  struct ForwardCache {
    Tensor<Scalar> input;
    BatchNormCache<Scalar> bn1;
    Tensor<Scalar> act1_pre;
    std::vector<PoolCache> pools;
    std::vector<RclCache<Scalar>> rcls;
    Tensor<Scalar> dropout_mask;
    Tensor<Scalar> dense_input;
  };

  /// Zero-mean normal with variance 2/fan_in (fan_in = all non-leading extents).
  Tensor<Scalar> init_tensor(Shape shape, std::mt19937_64& rng) {
    Index fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = Scalar(dist(rng));
    return t;
  }

  void set_mode(LayerMode mode) {
    bn1_.state.mode = mode;
    for (auto& rcl : rcls_) rcl.bn.state.mode = mode;
    dropout_.mode = mode;
  }

  NetworkConfig cfg_;
  ShapeTrace trace_;
  ConvBlock c1_;
  BnBlock bn1_;
  std::vector<RclBlock> rcls_;
  DropoutState<Scalar> dropout_;
  DenseBlock dense_;
  ForwardCache cache_;
  bool cache_valid_ = false;
};

}  // namespace rclnet
