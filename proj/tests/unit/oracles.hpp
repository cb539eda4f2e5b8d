#pragma once

// Independent reference implementations used as test oracles. These stay
// deliberately dumb (nested loops, explicit unrolling) and share no code with
// the GEMM/cache paths they check.

#include <set>
#include <vector>

#include "rclnet/layers.hpp"

namespace oracles {

using rclnet::ConvSpec;
using rclnet::Index;
using rclnet::Tensor;

/// Nested-loop cross-correlation with zero padding.
template <typename Scalar>
Tensor<Scalar> naive_conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                            const Tensor<Scalar>& bias, const ConvSpec& spec) {
  const Index channels = input.extent(0);
  const Index in_h = input.extent(1);
  const Index in_w = input.extent(2);
  const Index maps = kernels.extent(0);
  const Index out_h = rclnet::conv_output_extent(in_h, spec.kernel_h, spec.stride_h, spec.pad_h);
  const Index out_w = rclnet::conv_output_extent(in_w, spec.kernel_w, spec.stride_w, spec.pad_w);
  Tensor<Scalar> out({maps, out_h, out_w});
  for (Index k = 0; k < maps; ++k)
    for (Index oh = 0; oh < out_h; ++oh)
      for (Index ow = 0; ow < out_w; ++ow) {
        Scalar acc = bias[k];
        for (Index c = 0; c < channels; ++c)
          for (Index kh = 0; kh < spec.kernel_h; ++kh)
            for (Index kw = 0; kw < spec.kernel_w; ++kw) {
              const Index y = oh * spec.stride_h + kh - spec.pad_h;
              const Index x = ow * spec.stride_w + kw - spec.pad_w;
              if (y < 0 || y >= in_h || x < 0 || x >= in_w) continue;
              acc += input(c, y, x) * kernels(k, c, kh, kw);
            }
        out(k, oh, ow) = acc;
      }
  return out;
}

/// Plain-loop mean squared error.
inline double brute_mse(const std::vector<double>& a, const std::vector<double>& b) {
  double sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return sum / double(a.size());
}

/// Plain-loop Pearson correlation: centered dot product over centered norms.
inline double brute_pcc(const std::vector<double>& a, const std::vector<double>& b) {
  double mean_a = 0, mean_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= double(a.size());
  mean_b /= double(b.size());
  double num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - mean_a) * (b[i] - mean_b);
    na += (a[i] - mean_a) * (a[i] - mean_a);
    nb += (b[i] - mean_b) * (b[i] - mean_b);
  }
  return num / (std::sqrt(na) * std::sqrt(nb));
}

/// The recurrent layer rebuilt as an explicit feed-forward stack of T+1
/// steps whose weights are *independent copies* of the shared weights. Step t
/// recomputes its own feed-forward term from its own 1x1 copy, adds its own
/// recurrent copy's response, and every copy gets its own gradient, so the
/// stack provides both the unfold-equivalence output and the per-copy
/// gradients whose sums must match the shared-weight gradients.
template <typename Scalar>
struct UnrolledStack {
  std::vector<Tensor<Scalar>> ff_copies;   // T+1 copies of the 1x1 kernels
  std::vector<Tensor<Scalar>> rec_copies;  // T copies of the recurrent kernels
  std::vector<Tensor<Scalar>> bias_copies; // T copies of the bias
  rclnet::BatchNormState<Scalar>* bn = nullptr;  // inference-mode affine, shared
  rclnet::Activation act = rclnet::Activation::ReLU;

  // forward cache
  Tensor<Scalar> input;
  std::vector<Tensor<Scalar>> pre_act;
  std::vector<Tensor<Scalar>> state;

  static UnrolledStack from_shared(const rclnet::RclParams<Scalar>& params,
                                   rclnet::BatchNormState<Scalar>* bn, rclnet::Activation act) {
    UnrolledStack stack;
    stack.bn = bn;
    stack.act = act;
    for (int t = 0; t <= params.iterations; ++t) stack.ff_copies.push_back(params.ff_kernels);
    for (int t = 1; t <= params.iterations; ++t) {
      stack.rec_copies.push_back(params.rec_kernels);
      stack.bias_copies.push_back(params.bias);
    }
    return stack;
  }

  Tensor<Scalar> bn_affine(const Tensor<Scalar>& x) const {
    if (!bn) return x;
    Tensor<Scalar> out(x.shape());
    const Index batch = x.extent(0);
    const Index maps = x.extent(1);
    const Index plane = x.extent(2) * x.extent(3);
    for (Index b = 0; b < batch; ++b)
      for (Index k = 0; k < maps; ++k) {
        const Scalar inv = Scalar(1) / std::sqrt(bn->running_var[k] + bn->epsilon);
        for (Index i = 0; i < plane; ++i) {
          const Index at = (b * maps + k) * plane + i;
          out[at] = bn->gamma[k] * (x[at] - bn->running_mean[k]) * inv + bn->beta[k];
        }
      }
    return out;
  }

  Tensor<Scalar> bn_affine_backward(const Tensor<Scalar>& g) const {
    if (!bn) return g;
    Tensor<Scalar> out(g.shape());
    const Index batch = g.extent(0);
    const Index maps = g.extent(1);
    const Index plane = g.extent(2) * g.extent(3);
    for (Index b = 0; b < batch; ++b)
      for (Index k = 0; k < maps; ++k) {
        const Scalar scale = bn->gamma[k] / std::sqrt(bn->running_var[k] + bn->epsilon);
        for (Index i = 0; i < plane; ++i) {
          const Index at = (b * maps + k) * plane + i;
          out[at] = scale * g[at];
        }
      }
    return out;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& u) {
    using namespace rclnet;
    const ConvSpec ff_spec{};
    const int k = static_cast<int>(rec_copies.empty() ? 1 : rec_copies[0].extent(2));
    const ConvSpec rec_spec{k, k, 1, 1, (k - 1) / 2, (k - 1) / 2};
    const Index maps = ff_copies[0].extent(0);
    Tensor<Scalar> zero_bias({maps});

    input = u;
    pre_act.clear();
    state.clear();
    Tensor<Scalar> z = bn_affine(conv2d_batched(u, ff_copies[0], zero_bias, ff_spec));
    pre_act.push_back(z);
    apply_activation(z, act);
    state.push_back(z);
    for (std::size_t t = 1; t <= rec_copies.size(); ++t) {
      Tensor<Scalar> f = bn_affine(conv2d_batched(u, ff_copies[t], zero_bias, ff_spec));
      Tensor<Scalar> r = conv2d_batched(state.back(), rec_copies[t - 1], bias_copies[t - 1], rec_spec);
      r.array() += f.array();
      pre_act.push_back(r);
      apply_activation(r, act);
      state.push_back(std::move(r));
    }
    return state.back();
  }

  struct Grads {
    std::vector<Tensor<Scalar>> ff;    // per copy
    std::vector<Tensor<Scalar>> rec;   // per copy
    std::vector<Tensor<Scalar>> bias;  // per copy
  };

  Grads backward(const Tensor<Scalar>& out_grad) {
    using namespace rclnet;
    const ConvSpec ff_spec{};
    const int k = static_cast<int>(rec_copies.empty() ? 1 : rec_copies[0].extent(2));
    const ConvSpec rec_spec{k, k, 1, 1, (k - 1) / 2, (k - 1) / 2};
    const int T = static_cast<int>(rec_copies.size());

    Grads grads;
    grads.ff.resize(static_cast<std::size_t>(T) + 1);
    grads.rec.resize(static_cast<std::size_t>(T));
    grads.bias.resize(static_cast<std::size_t>(T));

    Tensor<Scalar> g = out_grad;
    for (int t = T; t >= 1; --t) {
      activation_backward_inplace(g, pre_act[static_cast<std::size_t>(t)], act);
      Tensor<Scalar> d_ff = bn_affine_backward(g);
      Conv2dGrads<Scalar> ff = conv2d_backward_batched(
          input, ff_copies[static_cast<std::size_t>(t)], ff_spec, d_ff);
      grads.ff[static_cast<std::size_t>(t)] = std::move(ff.kernels);
      Conv2dGrads<Scalar> rec = conv2d_backward_batched(
          state[static_cast<std::size_t>(t - 1)], rec_copies[static_cast<std::size_t>(t - 1)],
          rec_spec, g);
      grads.rec[static_cast<std::size_t>(t - 1)] = std::move(rec.kernels);
      grads.bias[static_cast<std::size_t>(t - 1)] = std::move(rec.bias);
      g = std::move(rec.input);
    }
    activation_backward_inplace(g, pre_act[0], act);
    Tensor<Scalar> d_ff = bn_affine_backward(g);
    Conv2dGrads<Scalar> ff = conv2d_backward_batched(input, ff_copies[0], ff_spec, d_ff);
    grads.ff[0] = std::move(ff.kernels);
    return grads;
  }
};

/// Distinct input-to-output path lengths in the unrolled graph of one
/// recurrent layer: node u feeds each step via one feed-forward edge, and
/// consecutive states connect via one recurrent edge.
inline std::set<int> unrolled_path_lengths(int iterations) {
  // Depth-first enumeration over the explicit DAG.
  std::set<int> lengths;
  // paths[t] = set of path lengths from u to x_t
  std::vector<std::set<int>> paths(static_cast<std::size_t>(iterations) + 1);
  for (int t = 0; t <= iterations; ++t) {
    paths[static_cast<std::size_t>(t)].insert(1);  // direct feed-forward edge u -> x_t
    if (t > 0)
      for (int len : paths[static_cast<std::size_t>(t - 1)])
        paths[static_cast<std::size_t>(t)].insert(len + 1);  // recurrent edge x_{t-1} -> x_t
  }
  lengths = paths[static_cast<std::size_t>(iterations)];
  return lengths;
}

}  // namespace oracles
