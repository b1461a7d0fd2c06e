#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pamunet/flops.hpp"
#include "pamunet/tensor.hpp"

namespace pamunet {

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

/// Handles to live parameters; writing through them updates the owning block.
template <typename T>
using ParameterList = std::vector<NamedTensor<T>>;

/// Seeded parameter factory. Each parameter draws from its own stream derived from
/// (seed, full parameter name), so a parameter's initial value does not depend on
/// which other layers exist in the network.
struct Initializer {
    std::uint64_t seed = 0;
    bool zero = false;

    /// Fan-in uniform with unit gain: U(-b, b) with b = sqrt(3 / fan_in).
    template <typename T>
    Tensor<T> kaiming(const std::string& name, Shape shape, int fan_in) const;
    template <typename T>
    Tensor<T> zeros(Shape shape) const;

    Initializer zeroed() const { return Initializer{seed, true}; }
};

/// Dense k x k convolution with optional bias.
template <typename T>
class Conv2d {
   public:
    Conv2d() = default;
    Conv2d(std::string name, int c_in, int c_out, int kernel, int stride, int padding, bool bias,
           const Initializer& init);

    Tensor<T> forward(const Tensor<T>& x) const;
    Shape output_shape(const Shape& in) const;
    Shape count_flops(const Shape& in, FlopsReport& report) const;
    void collect(ParameterList<T>& out) const;

    const Tensor<T>& weight() const { return weight_; }
    const Tensor<T>& bias() const { return bias_; }
    int in_channels() const { return c_in_; }
    int out_channels() const { return c_out_; }

   private:
    std::string name_;
    int c_in_ = 0, c_out_ = 0, kernel_ = 0, stride_ = 1, padding_ = 0;
    Tensor<T> weight_;  // (C_out, C_in, k, k)
    Tensor<T> bias_;    // (C_out, 1, 1) or undefined
};

/// 1x1 convolution with optional bias.
template <typename T>
class PointwiseConv {
   public:
    PointwiseConv() = default;
    PointwiseConv(std::string name, int c_in, int c_out, bool bias, const Initializer& init);

    Tensor<T> forward(const Tensor<T>& x) const;
    Shape output_shape(const Shape& in) const;
    Shape count_flops(const Shape& in, FlopsReport& report) const;
    void collect(ParameterList<T>& out) const;

    const Tensor<T>& weight() const { return weight_; }
    int in_channels() const { return c_in_; }
    int out_channels() const { return c_out_; }

   private:
    std::string name_;
    int c_in_ = 0, c_out_ = 0;
    Tensor<T> weight_;  // (C_out, C_in, 1, 1)
    Tensor<T> bias_;
};

/// Per-channel k x k convolution with optional bias.
template <typename T>
class DepthwiseConv {
   public:
    DepthwiseConv() = default;
    DepthwiseConv(std::string name, int channels, int kernel, int stride, int padding, bool bias,
                  const Initializer& init);

    Tensor<T> forward(const Tensor<T>& x) const;
    Shape output_shape(const Shape& in) const;
    Shape count_flops(const Shape& in, FlopsReport& report) const;
    void collect(ParameterList<T>& out) const;

    int stride() const { return stride_; }

   private:
    std::string name_;
    int channels_ = 0, kernel_ = 3, stride_ = 1, padding_ = 1;
    Tensor<T> weight_;  // (C, 1, k, k)
    Tensor<T> bias_;
};

/// Transposed convolution, kernel (C_in, C_out, k, k), no padding.
template <typename T>
class ConvTranspose {
   public:
    ConvTranspose() = default;
    ConvTranspose(std::string name, int c_in, int c_out, int kernel, int stride, bool bias,
                  const Initializer& init);

    Tensor<T> forward(const Tensor<T>& x) const;
    Shape output_shape(const Shape& in) const;
    Shape count_flops(const Shape& in, FlopsReport& report) const;
    void collect(ParameterList<T>& out) const;

    const Tensor<T>& weight() const { return weight_; }
    const Tensor<T>& bias() const { return bias_; }
    int out_channels() const { return c_out_; }

   private:
    std::string name_;
    int c_in_ = 0, c_out_ = 0, kernel_ = 2, stride_ = 2;
    Tensor<T> weight_;
    Tensor<T> bias_;
};

/// Depthwise-separable convolution: per-channel spatial filter (kernel_d) followed by a
/// 1x1 cross-channel mix (kernel_p), plus bias on the mixed output.
template <typename T>
class DSConvLayer {
   public:
    DSConvLayer() = default;
    DSConvLayer(std::string name, int c_in, int c_out, int kernel, int stride, int padding,
                const Initializer& init);
    /// Wraps explicit kernels; bias is zero.
    DSConvLayer(std::string name, Tensor<T> kernel_d, Tensor<T> kernel_p, int stride, int padding);

    Tensor<T> forward(const Tensor<T>& x) const;
    Shape output_shape(const Shape& in) const;
    Shape count_flops(const Shape& in, FlopsReport& report) const;
    void collect(ParameterList<T>& out) const;

    const Tensor<T>& kernel_d() const { return kernel_d_; }
    const Tensor<T>& kernel_p() const { return kernel_p_; }
    int stride() const { return stride_; }
    int padding() const { return padding_; }

   private:
    std::string name_;
    int c_in_ = 0, c_out_ = 0, kernel_ = 3, stride_ = 1, padding_ = 1;
    Tensor<T> kernel_d_;  // (C_in, 1, k, k)
    Tensor<T> kernel_p_;  // (C_out, C_in, 1, 1)
    Tensor<T> bias_;      // (C_out, 1, 1)
};

/// Inverted-residual bottleneck: 1x1 expand -> relu6 -> 3x3 depthwise (stride) -> relu6 ->
/// 1x1 linear projection, plus the input when stride is 1 and channel counts match.
template <typename T>
class IRBlock {
   public:
    IRBlock() = default;
    IRBlock(std::string name, int c_in, int c_out, int stride, int expansion_factor, const Initializer& init);

    Tensor<T> forward(const Tensor<T>& x) const;
    Shape output_shape(const Shape& in) const;
    Shape count_flops(const Shape& in, FlopsReport& report) const;
    void collect(ParameterList<T>& out) const;

    int in_channels() const { return c_in_; }
    int out_channels() const { return c_out_; }
    int hidden_channels() const { return c_in_ * expansion_factor_; }
    int expansion_factor() const { return expansion_factor_; }
    int stride() const { return stride_; }
    bool use_residual() const { return use_residual_; }

   private:
    std::string name_;
    int c_in_ = 0, c_out_ = 0, stride_ = 1, expansion_factor_ = 6;
    bool use_residual_ = false;
    PointwiseConv<T> expand_;
    DepthwiseConv<T> depthwise_;
    PointwiseConv<T> project_;
};

/// Stride-2, k=2 transposed convolution (exact doubling) followed by a stride-1 IRBlock.
template <typename T>
class UpBlock {
   public:
    UpBlock() = default;
    UpBlock(std::string name, int c_in, int c_out, int expansion_factor, const Initializer& init);

    Tensor<T> forward(const Tensor<T>& x) const;
    Shape output_shape(const Shape& in) const;
    Shape count_flops(const Shape& in, FlopsReport& report) const;
    void collect(ParameterList<T>& out) const;

    const ConvTranspose<T>& deconv() const { return deconv_; }
    const IRBlock<T>& refine() const { return refine_; }

   private:
    std::string name_;
    ConvTranspose<T> deconv_;
    IRBlock<T> refine_;
};

/// Throws ShapeError unless `shape` is (N, channels, H, W).
void require_feature_map(const std::string& layer, const Shape& shape, int channels);

}  // namespace pamunet
