#pragma once

#include <vector>

#include "pamunet/autograd.hpp"
#include "pamunet/tensor.hpp"

/// Differentiable operations. Every op records itself on the current tape when one
/// of its inputs requires a gradient; all ops are single-threaded and deterministic.
namespace pamunet::ops {

/// Output extent of a strided, zero-padded window sweep.
int conv_output_extent(int input, int kernel, int stride, int padding);
/// Output extent of a transposed convolution without padding.
int conv_transpose_output_extent(int input, int kernel, int stride);

/// Dense convolution. kernel (C_out, C_in, k, k), zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int padding);

/// Per-channel convolution. kernel (C, 1, k, k); channel c only sees input channel c.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int padding);

/// 1x1 convolution. kernel (C_out, C_in, 1, 1).
template <typename T>
Tensor<T> pointwise_conv2d(const Tensor<T>& input, const Tensor<T>& kernel);

/// Transposed convolution without padding. kernel (C_in, C_out, k, k), stride 1 or 2.
/// Output extent is (H - 1) * stride + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride);

/// Broadcast result shape; axes are right-aligned and may only broadcast from 1.
Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add(const Tensor<T>& a, T value);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, T value);

template <typename T>
Tensor<T> relu6(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
template <typename T>
Tensor<T> log(const Tensor<T>& x);
/// Gradient is 1 strictly inside (lo, hi) and 0 elsewhere, including the boundary.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

/// (M, K) x (K, N) or batched (B, M, K) x (B, K, N).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// Population variance over all entries, (1/N) sum (x - mean)^2.
template <typename T>
Tensor<T> variance(const Tensor<T>& x);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int axis, int parts);

/// (N, C, H, W) -> (N, H*W, C): one row per spatial position.
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x);
/// (N, H*W, C) -> (N, C, H, W).
template <typename T>
Tensor<T> from_tokens(const Tensor<T>& x, int height, int width);

}  // namespace pamunet::ops
