#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "rclnet/tensor.hpp"

namespace rclnet {

/// Cross-correlation spec with zero padding.
struct ConvSpec {
  int kernel_h = 1;
  int kernel_w = 1;
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
};

/// Pooling window. pool_w/stride_w act on the width (last) axis, pool_h and
/// stride_h on the height axis.
struct PoolSpec {
  int pool_w = 1;
  int pool_h = 1;
  int stride_w = 1;
  int stride_h = 1;
};

inline Index conv_output_extent(Index in, int kernel, int stride, int pad) {
  return (in + 2 * static_cast<Index>(pad) - kernel) / stride + 1;
}

inline Index pool_output_extent(Index in, int pool, int stride) {
  // Floor semantics: windows that would overrun the input are dropped.
  return (in - pool) / stride + 1;
}

namespace detail {

inline void check_conv_spec(const ConvSpec& spec) {
  if (spec.kernel_h < 1 || spec.kernel_w < 1 || spec.stride_h < 1 || spec.stride_w < 1 ||
      spec.pad_h < 0 || spec.pad_w < 0)
    throw ConfigError("invalid convolution spec: kernel " + std::to_string(spec.kernel_h) + "x" +
                      std::to_string(spec.kernel_w) + ", stride " + std::to_string(spec.stride_h) +
                      "x" + std::to_string(spec.stride_w) + ", pad " + std::to_string(spec.pad_h) +
                      "x" + std::to_string(spec.pad_w));
}

inline bool is_pointwise(const ConvSpec& spec) {
  return spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride_h == 1 && spec.stride_w == 1 &&
         spec.pad_h == 0 && spec.pad_w == 0;
}

/// Expand one sample's patches into a (C*kh*kw) x (out_h*out_w) column matrix.
template <typename Scalar>
void im2col(const Scalar* src, Index channels, Index in_h, Index in_w, const ConvSpec& spec,
            Index out_h, Index out_w, Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& col) {
  col.setZero(channels * spec.kernel_h * spec.kernel_w, out_h * out_w);
  for (Index oh = 0; oh < out_h; ++oh) {
    for (Index ow = 0; ow < out_w; ++ow) {
      Scalar* dst = col.col(oh * out_w + ow).data();
      for (Index c = 0; c < channels; ++c) {
        for (Index kh = 0; kh < spec.kernel_h; ++kh) {
          const Index y = oh * spec.stride_h + kh - spec.pad_h;
          if (y < 0 || y >= in_h) {
            dst += spec.kernel_w;
            continue;
          }
          const Scalar* row = src + (c * in_h + y) * in_w;
          for (Index kw = 0; kw < spec.kernel_w; ++kw) {
            const Index x = ow * spec.stride_w + kw - spec.pad_w;
            *dst++ = (x < 0 || x >= in_w) ? Scalar(0) : row[x];
          }
        }
      }
    }
  }
}

/// Scatter-add a column-matrix gradient back onto one sample's input layout.
template <typename Scalar>
void col2im(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& col, Index channels,
            Index in_h, Index in_w, const ConvSpec& spec, Index out_h, Index out_w, Scalar* dst) {
  for (Index oh = 0; oh < out_h; ++oh) {
    for (Index ow = 0; ow < out_w; ++ow) {
      const Scalar* src = col.col(oh * out_w + ow).data();
      for (Index c = 0; c < channels; ++c) {
        for (Index kh = 0; kh < spec.kernel_h; ++kh) {
          const Index y = oh * spec.stride_h + kh - spec.pad_h;
          if (y < 0 || y >= in_h) {
            src += spec.kernel_w;
            continue;
          }
          Scalar* row = dst + (c * in_h + y) * in_w;
          for (Index kw = 0; kw < spec.kernel_w; ++kw) {
            const Index x = ow * spec.stride_w + kw - spec.pad_w;
            if (x >= 0 && x < in_w) row[x] += *src;
            ++src;
          }
        }
      }
    }
  }
}

template <typename Scalar>
void check_conv_shapes(const Shape& input, const Tensor<Scalar>& kernels,
                       const Tensor<Scalar>& bias, const ConvSpec& spec) {
  check_conv_spec(spec);
  const Index channels = input[input.size() - 3];
  if (kernels.rank() != 4)
    throw DimensionError("conv2d kernels must be KxCxkhxkw, got " + shape_to_string(kernels.shape()));
  if (kernels.extent(1) != channels)
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(channels) +
                         ", kernels expect " + std::to_string(kernels.extent(1)));
  if (kernels.extent(2) != spec.kernel_h || kernels.extent(3) != spec.kernel_w)
    throw DimensionError("conv2d kernel tensor " + shape_to_string(kernels.shape()) +
                         " does not match spec kernel " + std::to_string(spec.kernel_h) + "x" +
                         std::to_string(spec.kernel_w));
  if (bias.rank() != 1 || bias.extent(0) != kernels.extent(0))
    throw DimensionError("conv2d bias must have one entry per output map (" +
                         std::to_string(kernels.extent(0)) + "), got " +
                         shape_to_string(bias.shape()));
  const Index out_h =
      conv_output_extent(input[input.size() - 2], spec.kernel_h, spec.stride_h, spec.pad_h);
  const Index out_w =
      conv_output_extent(input[input.size() - 1], spec.kernel_w, spec.stride_w, spec.pad_w);
  if (out_h < 1 || out_w < 1)
    throw ConfigError("conv2d output extent is not positive: " + std::to_string(out_h) + "x" +
                      std::to_string(out_w) + " from input " + shape_to_string(input));
}

}  // namespace detail

/// 2-D cross-correlation with zero padding. input CxHxW, kernels KxCxkhxkw,
/// bias K; output KxH'xW' where H' = floor((H + 2*pad_h - kh)/stride_h) + 1.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                      const Tensor<Scalar>& bias, const ConvSpec& spec) {
  if (input.rank() != 3)
    throw DimensionError("conv2d input must be CxHxW, got " + shape_to_string(input.shape()));
  detail::check_conv_shapes(input.shape(), kernels, bias, spec);
  const Index maps = kernels.extent(0);
  const Index patch = kernels.extent(1) * spec.kernel_h * spec.kernel_w;
  const Index out_h = conv_output_extent(input.extent(1), spec.kernel_h, spec.stride_h, spec.pad_h);
  const Index out_w = conv_output_extent(input.extent(2), spec.kernel_w, spec.stride_w, spec.pad_w);

  Tensor<Scalar> out({maps, out_h, out_w});
  auto weights = kernels.matrix(maps, patch);
  auto out_mat = out.matrix(maps, out_h * out_w);
  if (detail::is_pointwise(spec)) {
    out_mat.noalias() = weights * input.matrix(patch, out_h * out_w);
  } else {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> col;
    detail::im2col(input.data(), input.extent(0), input.extent(1), input.extent(2), spec, out_h,
                   out_w, col);
    out_mat.noalias() = weights * col;
  }
  out_mat.colwise() += bias.vec();
  return out;
}

template <typename Scalar>
struct Conv2dGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> kernels;
  Tensor<Scalar> bias;
};

/// Gradients of conv2d w.r.t. input, kernels and bias given the output gradient.
template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                                    const ConvSpec& spec, const Tensor<Scalar>& out_grad) {
  const Index maps = kernels.extent(0);
  const Index patch = kernels.extent(1) * spec.kernel_h * spec.kernel_w;
  const Index out_h = conv_output_extent(input.extent(1), spec.kernel_h, spec.stride_h, spec.pad_h);
  const Index out_w = conv_output_extent(input.extent(2), spec.kernel_w, spec.stride_w, spec.pad_w);
  if (out_grad.rank() != 3 || out_grad.extent(0) != maps || out_grad.extent(1) != out_h ||
      out_grad.extent(2) != out_w)
    throw DimensionError("conv2d_backward output gradient " + shape_to_string(out_grad.shape()) +
                         " does not match forward output");

  Conv2dGrads<Scalar> grads{Tensor<Scalar>(input.shape()), Tensor<Scalar>(kernels.shape()),
                            Tensor<Scalar>({maps})};
  auto weights = kernels.matrix(maps, patch);
  auto d_out = out_grad.matrix(maps, out_h * out_w);
  grads.bias.vec() = d_out.rowwise().sum();

  if (detail::is_pointwise(spec)) {
    auto in_mat = input.matrix(patch, out_h * out_w);
    grads.kernels.matrix(maps, patch).noalias() = d_out * in_mat.transpose();
    grads.input.matrix(patch, out_h * out_w).noalias() = weights.transpose() * d_out;
  } else {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> col;
    detail::im2col(input.data(), input.extent(0), input.extent(1), input.extent(2), spec, out_h,
                   out_w, col);
    grads.kernels.matrix(maps, patch).noalias() = d_out * col.transpose();
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> d_col = weights.transpose() * d_out;
    detail::col2im(d_col, input.extent(0), input.extent(1), input.extent(2), spec, out_h, out_w,
                   grads.input.data());
  }
  return grads;
}

/// conv2d over a BxCxHxW batch.
template <typename Scalar>
Tensor<Scalar> conv2d_batched(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                              const Tensor<Scalar>& bias, const ConvSpec& spec) {
  if (input.rank() != 4)
    throw DimensionError("conv2d_batched input must be BxCxHxW, got " +
                         shape_to_string(input.shape()));
  detail::check_conv_shapes(input.shape(), kernels, bias, spec);
  const Index batch = input.extent(0);
  const Index channels = input.extent(1);
  const Index in_h = input.extent(2);
  const Index in_w = input.extent(3);
  const Index maps = kernels.extent(0);
  const Index patch = channels * spec.kernel_h * spec.kernel_w;
  const Index out_h = conv_output_extent(in_h, spec.kernel_h, spec.stride_h, spec.pad_h);
  const Index out_w = conv_output_extent(in_w, spec.kernel_w, spec.stride_w, spec.pad_w);

  Tensor<Scalar> out({batch, maps, out_h, out_w});
  auto weights = kernels.matrix(maps, patch);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> col;
  for (Index b = 0; b < batch; ++b) {
    typename Tensor<Scalar>::MatMap out_mat(out.data() + b * maps * out_h * out_w, maps,
                                            out_h * out_w);
    if (detail::is_pointwise(spec)) {
      typename Tensor<Scalar>::ConstMatMap in_mat(input.data() + b * channels * in_h * in_w, patch,
                                                  out_h * out_w);
      out_mat.noalias() = weights * in_mat;
    } else {
      detail::im2col(input.data() + b * channels * in_h * in_w, channels, in_h, in_w, spec, out_h,
                     out_w, col);
      out_mat.noalias() = weights * col;
    }
    out_mat.colwise() += bias.vec();
  }
  return out;
}

/// Batched conv2d backward; kernel/bias gradients are summed over the batch.
template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward_batched(const Tensor<Scalar>& input,
                                            const Tensor<Scalar>& kernels, const ConvSpec& spec,
                                            const Tensor<Scalar>& out_grad) {
  const Index batch = input.extent(0);
  const Index channels = input.extent(1);
  const Index in_h = input.extent(2);
  const Index in_w = input.extent(3);
  const Index maps = kernels.extent(0);
  const Index patch = channels * spec.kernel_h * spec.kernel_w;
  const Index out_h = conv_output_extent(in_h, spec.kernel_h, spec.stride_h, spec.pad_h);
  const Index out_w = conv_output_extent(in_w, spec.kernel_w, spec.stride_w, spec.pad_w);
  if (out_grad.rank() != 4 || out_grad.extent(0) != batch || out_grad.extent(1) != maps ||
      out_grad.extent(2) != out_h || out_grad.extent(3) != out_w)
    throw DimensionError("conv2d_backward_batched gradient " + shape_to_string(out_grad.shape()) +
                         " does not match forward output");

  Conv2dGrads<Scalar> grads{Tensor<Scalar>(input.shape()), Tensor<Scalar>(kernels.shape()),
                            Tensor<Scalar>({maps})};
  auto weights = kernels.matrix(maps, patch);
  auto d_weights = grads.kernels.matrix(maps, patch);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> col, d_col;
  for (Index b = 0; b < batch; ++b) {
    typename Tensor<Scalar>::ConstMatMap d_out(out_grad.data() + b * maps * out_h * out_w, maps,
                                               out_h * out_w);
    grads.bias.vec() += d_out.rowwise().sum();
    if (detail::is_pointwise(spec)) {
      typename Tensor<Scalar>::ConstMatMap in_mat(input.data() + b * channels * in_h * in_w, patch,
                                                  out_h * out_w);
      d_weights.noalias() += d_out * in_mat.transpose();
      typename Tensor<Scalar>::MatMap d_in(grads.input.data() + b * channels * in_h * in_w, patch,
                                           out_h * out_w);
      d_in.noalias() = weights.transpose() * d_out;
    } else {
      detail::im2col(input.data() + b * channels * in_h * in_w, channels, in_h, in_w, spec, out_h,
                     out_w, col);
      d_weights.noalias() += d_out * col.transpose();
      d_col.noalias() = weights.transpose() * d_out;
      detail::col2im(d_col, channels, in_h, in_w, spec, out_h, out_w,
                     grads.input.data() + b * channels * in_h * in_w);
    }
  }
  return grads;
}

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> output;
  // Flat index (into the pooled tensor's input) of the selected maximum,
  // one per output cell.
  std::vector<Index> argmax;
};

namespace detail {

template <typename Scalar>
void maxpool_plane(const Scalar* plane, Index in_h, Index in_w, const PoolSpec& spec, Index out_h,
                   Index out_w, Index base, Scalar* dst, Index* arg) {
  Index cell = 0;
  for (Index oh = 0; oh < out_h; ++oh) {
    for (Index ow = 0; ow < out_w; ++ow, ++cell) {
      Index best = (oh * spec.stride_h) * in_w + ow * spec.stride_w;
      Scalar best_value = plane[best];
      for (Index ph = 0; ph < spec.pool_h; ++ph) {
        const Index y = oh * spec.stride_h + ph;
        for (Index pw = 0; pw < spec.pool_w; ++pw) {
          const Index idx = y * in_w + ow * spec.stride_w + pw;
          // Strict > keeps the lowest linear index on ties.
          if (plane[idx] > best_value) {
            best_value = plane[idx];
            best = idx;
          }
        }
      }
      dst[cell] = best_value;
      arg[cell] = base + best;
    }
  }
}

inline void check_pool_spec(const PoolSpec& spec, Index in_h, Index in_w, const Shape& shape) {
  if (spec.pool_w < 1 || spec.pool_h < 1 || spec.stride_w < 1 || spec.stride_h < 1)
    throw ConfigError("invalid pool spec: pool " + std::to_string(spec.pool_w) + "x" +
                      std::to_string(spec.pool_h) + ", stride " + std::to_string(spec.stride_w) +
                      "x" + std::to_string(spec.stride_h));
  if (pool_output_extent(in_h, spec.pool_h, spec.stride_h) < 1 ||
      pool_output_extent(in_w, spec.pool_w, spec.stride_w) < 1)
    throw ConfigError("pool window " + std::to_string(spec.pool_w) + "x" +
                      std::to_string(spec.pool_h) + " larger than input " + shape_to_string(shape));
}

}  // namespace detail

/// Max pooling over CxHxW with floor semantics; ties resolve to the lowest
/// linear index so the backward pass is deterministic.
template <typename Scalar>
PoolResult<Scalar> maxpool2d(const Tensor<Scalar>& input, const PoolSpec& spec) {
  if (input.rank() != 3)
    throw DimensionError("maxpool2d input must be CxHxW, got " + shape_to_string(input.shape()));
  const Index channels = input.extent(0);
  const Index in_h = input.extent(1);
  const Index in_w = input.extent(2);
  detail::check_pool_spec(spec, in_h, in_w, input.shape());
  const Index out_h = pool_output_extent(in_h, spec.pool_h, spec.stride_h);
  const Index out_w = pool_output_extent(in_w, spec.pool_w, spec.stride_w);

  PoolResult<Scalar> result{Tensor<Scalar>({channels, out_h, out_w}), {}};
  result.argmax.resize(static_cast<std::size_t>(channels * out_h * out_w));
  for (Index c = 0; c < channels; ++c)
    detail::maxpool_plane(input.data() + c * in_h * in_w, in_h, in_w, spec, out_h, out_w,
                          c * in_h * in_w, result.output.data() + c * out_h * out_w,
                          result.argmax.data() + c * out_h * out_w);
  return result;
}

/// Max pooling over a BxCxHxW batch.
template <typename Scalar>
PoolResult<Scalar> maxpool2d_batched(const Tensor<Scalar>& input, const PoolSpec& spec) {
  if (input.rank() != 4)
    throw DimensionError("maxpool2d_batched input must be BxCxHxW, got " +
                         shape_to_string(input.shape()));
  const Index planes = input.extent(0) * input.extent(1);
  const Index in_h = input.extent(2);
  const Index in_w = input.extent(3);
  detail::check_pool_spec(spec, in_h, in_w, input.shape());
  const Index out_h = pool_output_extent(in_h, spec.pool_h, spec.stride_h);
  const Index out_w = pool_output_extent(in_w, spec.pool_w, spec.stride_w);

  PoolResult<Scalar> result{Tensor<Scalar>({input.extent(0), input.extent(1), out_h, out_w}), {}};
  result.argmax.resize(static_cast<std::size_t>(planes * out_h * out_w));
  for (Index p = 0; p < planes; ++p)
    detail::maxpool_plane(input.data() + p * in_h * in_w, in_h, in_w, spec, out_h, out_w,
                          p * in_h * in_w, result.output.data() + p * out_h * out_w,
                          result.argmax.data() + p * out_h * out_w);
  return result;
}

/// Routes the output gradient to the recorded argmax positions. Works for both
/// the batched and unbatched layouts since argmax indices are flat.
template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const Shape& input_shape, const std::vector<Index>& argmax,
                                  const Tensor<Scalar>& out_grad) {
  if (static_cast<Index>(argmax.size()) != out_grad.size())
    throw StateError("maxpool2d_backward: argmax cache does not match output gradient");
  Tensor<Scalar> input_grad(input_shape);
  for (Index i = 0; i < out_grad.size(); ++i)
    input_grad[argmax[static_cast<std::size_t>(i)]] += out_grad[i];
  return input_grad;
}

/// y = W x + b with W of shape OxD.
template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                     const Tensor<Scalar>& bias) {
  const Index d = input.size();
  if (weights.rank() != 2 || weights.extent(1) != d)
    throw DimensionError("dense weights " + shape_to_string(weights.shape()) +
                         " do not accept input of length " + std::to_string(d));
  const Index o = weights.extent(0);
  if (bias.size() != o)
    throw DimensionError("dense bias length " + std::to_string(bias.size()) + " != outputs " +
                         std::to_string(o));
  Tensor<Scalar> out({o});
  out.vec().noalias() = weights.matrix(o, d) * input.vec();
  out.vec() += bias.vec();
  return out;
}

template <typename Scalar>
struct DenseGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;
};

template <typename Scalar>
DenseGrads<Scalar> dense_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                                  const Tensor<Scalar>& out_grad) {
  const Index d = input.size();
  const Index o = weights.extent(0);
  if (out_grad.size() != o)
    throw DimensionError("dense_backward gradient length " + std::to_string(out_grad.size()) +
                         " != outputs " + std::to_string(o));
  DenseGrads<Scalar> grads{Tensor<Scalar>(input.shape()), Tensor<Scalar>(weights.shape()),
                           Tensor<Scalar>({o})};
  grads.input.vec().noalias() = weights.matrix(o, d).transpose() * out_grad.vec();
  grads.weights.matrix(o, d).noalias() = out_grad.vec() * input.vec().transpose();
  grads.bias.vec() = out_grad.vec();
  return grads;
}

/// Dense layer over a batch of flattened inputs (BxD -> BxO).
template <typename Scalar>
Tensor<Scalar> dense_batched(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                             const Tensor<Scalar>& bias) {
  const Index batch = input.extent(0);
  const Index d = input.extent(1);
  if (weights.rank() != 2 || weights.extent(1) != d)
    throw DimensionError("dense weights " + shape_to_string(weights.shape()) +
                         " do not accept input of width " + std::to_string(d));
  const Index o = weights.extent(0);
  Tensor<Scalar> out({batch, o});
  out.matrix(batch, o).noalias() = input.matrix(batch, d) * weights.matrix(o, d).transpose();
  out.matrix(batch, o).rowwise() += bias.vec().transpose();
  return out;
}

template <typename Scalar>
DenseGrads<Scalar> dense_backward_batched(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                                          const Tensor<Scalar>& out_grad) {
  const Index batch = input.extent(0);
  const Index d = input.extent(1);
  const Index o = weights.extent(0);
  DenseGrads<Scalar> grads{Tensor<Scalar>(input.shape()), Tensor<Scalar>(weights.shape()),
                           Tensor<Scalar>({o})};
  grads.input.matrix(batch, d).noalias() = out_grad.matrix(batch, o) * weights.matrix(o, d);
  grads.weights.matrix(o, d).noalias() =
      out_grad.matrix(batch, o).transpose() * input.matrix(batch, d);
  grads.bias.vec() = out_grad.matrix(batch, o).colwise().sum();
  return grads;
}

}  // namespace rclnet
