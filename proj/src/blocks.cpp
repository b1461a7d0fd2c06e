#include "pamunet/blocks.hpp"

#include <cmath>

#include "pamunet/ops.hpp"
#include "pamunet/random.hpp"

namespace pamunet {

void require_feature_map(const std::string& layer, const Shape& shape, int channels) {
    if (shape.size() != 4) {
        throw ShapeError(layer + ": expected (N, C, H, W) input, got " + to_string(shape));
    }
    if (shape[1] != channels) {
        throw ShapeError(layer + ": channel axis 1 is " + std::to_string(shape[1]) + " but layer expects " +
                         std::to_string(channels));
    }
}

template <typename T>
Tensor<T> Initializer::kaiming(const std::string& name, Shape shape, int fan_in) const {
    if (zero) return Tensor<T>::zeros(std::move(shape), true);
    Rng rng(seed, fnv1a(name));
    // Unit gain: without normalization, the relu gain of sqrt(2) compounds through the residual stacks.
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::vector<T> values(numel(shape));
    for (T& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
Tensor<T> Initializer::zeros(Shape shape) const {
    return Tensor<T>::zeros(std::move(shape), true);
}

namespace {

template <typename T>
Tensor<T> add_bias(const Tensor<T>& y, const Tensor<T>& bias) {
    return bias.defined() ? ops::add(y, bias) : y;
}

template <typename T>
void push(ParameterList<T>& out, const std::string& name, const Tensor<T>& t) {
    if (t.defined()) out.push_back({name, t});
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, int c_in, int c_out, int kernel, int stride, int padding, bool bias,
                  const Initializer& init)
    : name_(std::move(name)), c_in_(c_in), c_out_(c_out), kernel_(kernel), stride_(stride), padding_(padding) {
    weight_ = init.kaiming<T>(name_ + ".weight", {c_out, c_in, kernel, kernel}, c_in * kernel * kernel);
    if (bias) bias_ = init.zeros<T>({c_out, 1, 1});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
    require_feature_map(name_, x.shape(), c_in_);
    return add_bias(ops::conv2d(x, weight_, stride_, padding_), bias_);
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
    require_feature_map(name_, in, c_in_);
    return {in[0], c_out_, ops::conv_output_extent(in[2], kernel_, stride_, padding_),
            ops::conv_output_extent(in[3], kernel_, stride_, padding_)};
}

template <typename T>
Shape Conv2d<T>::count_flops(const Shape& in, FlopsReport& report) const {
    Shape out = output_shape(in);
    report.add(name_, "conv2d", flops::conv2d_macs(in[0], kernel_, c_in_, c_out_, out[2], out[3]));
    return out;
}

template <typename T>
void Conv2d<T>::collect(ParameterList<T>& out) const {
    push(out, name_ + ".weight", weight_);
    push(out, name_ + ".bias", bias_);
}

// ---------------------------------------------------------------- PointwiseConv

template <typename T>
PointwiseConv<T>::PointwiseConv(std::string name, int c_in, int c_out, bool bias, const Initializer& init)
    : name_(std::move(name)), c_in_(c_in), c_out_(c_out) {
    weight_ = init.kaiming<T>(name_ + ".weight", {c_out, c_in, 1, 1}, c_in);
    if (bias) bias_ = init.zeros<T>({c_out, 1, 1});
}

template <typename T>
Tensor<T> PointwiseConv<T>::forward(const Tensor<T>& x) const {
    require_feature_map(name_, x.shape(), c_in_);
    return add_bias(ops::pointwise_conv2d(x, weight_), bias_);
}

template <typename T>
Shape PointwiseConv<T>::output_shape(const Shape& in) const {
    require_feature_map(name_, in, c_in_);
    return {in[0], c_out_, in[2], in[3]};
}

template <typename T>
Shape PointwiseConv<T>::count_flops(const Shape& in, FlopsReport& report) const {
    Shape out = output_shape(in);
    report.add(name_, "pointwise", flops::pointwise_macs(in[0], c_in_, c_out_, out[2], out[3]));
    return out;
}

template <typename T>
void PointwiseConv<T>::collect(ParameterList<T>& out) const {
    push(out, name_ + ".weight", weight_);
    push(out, name_ + ".bias", bias_);
}

// ---------------------------------------------------------------- DepthwiseConv

template <typename T>
DepthwiseConv<T>::DepthwiseConv(std::string name, int channels, int kernel, int stride, int padding, bool bias,
                                const Initializer& init)
    : name_(std::move(name)), channels_(channels), kernel_(kernel), stride_(stride), padding_(padding) {
    weight_ = init.kaiming<T>(name_ + ".weight", {channels, 1, kernel, kernel}, kernel * kernel);
    if (bias) bias_ = init.zeros<T>({channels, 1, 1});
}

template <typename T>
Tensor<T> DepthwiseConv<T>::forward(const Tensor<T>& x) const {
    require_feature_map(name_, x.shape(), channels_);
    return add_bias(ops::depthwise_conv2d(x, weight_, stride_, padding_), bias_);
}

template <typename T>
Shape DepthwiseConv<T>::output_shape(const Shape& in) const {
    require_feature_map(name_, in, channels_);
    return {in[0], channels_, ops::conv_output_extent(in[2], kernel_, stride_, padding_),
            ops::conv_output_extent(in[3], kernel_, stride_, padding_)};
}

template <typename T>
Shape DepthwiseConv<T>::count_flops(const Shape& in, FlopsReport& report) const {
    Shape out = output_shape(in);
    report.add(name_, "depthwise", flops::depthwise_macs(in[0], kernel_, channels_, out[2], out[3]));
    return out;
}

template <typename T>
void DepthwiseConv<T>::collect(ParameterList<T>& out) const {
    push(out, name_ + ".weight", weight_);
    push(out, name_ + ".bias", bias_);
}

// ---------------------------------------------------------------- ConvTranspose

template <typename T>
ConvTranspose<T>::ConvTranspose(std::string name, int c_in, int c_out, int kernel, int stride, bool bias,
                                const Initializer& init)
    : name_(std::move(name)), c_in_(c_in), c_out_(c_out), kernel_(kernel), stride_(stride) {
    ops::conv_transpose_output_extent(1, kernel, stride);  // validates stride
    // Each output pixel receives c_in * (k / s)^2 taps.
    const int taps = std::max(1, (kernel * kernel) / (stride * stride));
    weight_ = init.kaiming<T>(name_ + ".weight", {c_in, c_out, kernel, kernel}, c_in * taps);
    if (bias) bias_ = init.zeros<T>({c_out, 1, 1});
}

template <typename T>
Tensor<T> ConvTranspose<T>::forward(const Tensor<T>& x) const {
    require_feature_map(name_, x.shape(), c_in_);
    return add_bias(ops::conv_transpose2d(x, weight_, stride_), bias_);
}

template <typename T>
Shape ConvTranspose<T>::output_shape(const Shape& in) const {
    require_feature_map(name_, in, c_in_);
    return {in[0], c_out_, ops::conv_transpose_output_extent(in[2], kernel_, stride_),
            ops::conv_transpose_output_extent(in[3], kernel_, stride_)};
}

template <typename T>
Shape ConvTranspose<T>::count_flops(const Shape& in, FlopsReport& report) const {
    Shape out = output_shape(in);
    report.add(name_, "conv_transpose", flops::conv_transpose_macs(in[0], kernel_, c_in_, c_out_, in[2], in[3]));
    return out;
}

template <typename T>
void ConvTranspose<T>::collect(ParameterList<T>& out) const {
    push(out, name_ + ".weight", weight_);
    push(out, name_ + ".bias", bias_);
}

// ---------------------------------------------------------------- DSConvLayer

template <typename T>
DSConvLayer<T>::DSConvLayer(std::string name, int c_in, int c_out, int kernel, int stride, int padding,
                            const Initializer& init)
    : name_(std::move(name)), c_in_(c_in), c_out_(c_out), kernel_(kernel), stride_(stride), padding_(padding) {
    kernel_d_ = init.kaiming<T>(name_ + ".kernel_d", {c_in, 1, kernel, kernel}, kernel * kernel);
    kernel_p_ = init.kaiming<T>(name_ + ".kernel_p", {c_out, c_in, 1, 1}, c_in);
    bias_ = init.zeros<T>({c_out, 1, 1});
}

template <typename T>
DSConvLayer<T>::DSConvLayer(std::string name, Tensor<T> kernel_d, Tensor<T> kernel_p, int stride, int padding)
    : name_(std::move(name)), stride_(stride), padding_(padding) {
    if (kernel_d.rank() != 4 || kernel_d.dim(1) != 1 || kernel_d.dim(2) != kernel_d.dim(3)) {
        throw ShapeError(name_ + ": kernel_d must be (C_in, 1, k, k), got " + to_string(kernel_d.shape()));
    }
    if (kernel_p.rank() != 4 || kernel_p.dim(2) != 1 || kernel_p.dim(3) != 1) {
        throw ShapeError(name_ + ": kernel_p must be (C_out, C_in, 1, 1), got " + to_string(kernel_p.shape()));
    }
    if (kernel_p.dim(1) != kernel_d.dim(0)) {
        throw ShapeError(name_ + ": kernel_d has " + std::to_string(kernel_d.dim(0)) +
                         " channels but kernel_p expects C_in = " + std::to_string(kernel_p.dim(1)));
    }
    c_in_ = kernel_d.dim(0);
    c_out_ = kernel_p.dim(0);
    kernel_ = kernel_d.dim(2);
    kernel_d_ = std::move(kernel_d);
    kernel_p_ = std::move(kernel_p);
    bias_ = Tensor<T>::zeros({c_out_, 1, 1}, true);
}

template <typename T>
Tensor<T> DSConvLayer<T>::forward(const Tensor<T>& x) const {
    require_feature_map(name_, x.shape(), c_in_);
    Tensor<T> spatial = ops::depthwise_conv2d(x, kernel_d_, stride_, padding_);
    return ops::add(ops::pointwise_conv2d(spatial, kernel_p_), bias_);
}

template <typename T>
Shape DSConvLayer<T>::output_shape(const Shape& in) const {
    require_feature_map(name_, in, c_in_);
    return {in[0], c_out_, ops::conv_output_extent(in[2], kernel_, stride_, padding_),
            ops::conv_output_extent(in[3], kernel_, stride_, padding_)};
}

template <typename T>
Shape DSConvLayer<T>::count_flops(const Shape& in, FlopsReport& report) const {
    Shape out = output_shape(in);
    report.add(name_ + ".depthwise", "depthwise", flops::depthwise_macs(in[0], kernel_, c_in_, out[2], out[3]));
    report.add(name_ + ".pointwise", "pointwise", flops::pointwise_macs(in[0], c_in_, c_out_, out[2], out[3]));
    return out;
}

template <typename T>
void DSConvLayer<T>::collect(ParameterList<T>& out) const {
    push(out, name_ + ".kernel_d", kernel_d_);
    push(out, name_ + ".kernel_p", kernel_p_);
    push(out, name_ + ".bias", bias_);
}

// ---------------------------------------------------------------- IRBlock

template <typename T>
IRBlock<T>::IRBlock(std::string name, int c_in, int c_out, int stride, int expansion_factor, const Initializer& init)
    : name_(std::move(name)), c_in_(c_in), c_out_(c_out), stride_(stride), expansion_factor_(expansion_factor) {
    if (expansion_factor < 1) throw std::invalid_argument(name_ + ": expansion factor must be >= 1");
    if (stride != 1 && stride != 2) throw std::invalid_argument(name_ + ": stride must be 1 or 2");
    use_residual_ = stride == 1 && c_in == c_out;
    const int hidden = c_in * expansion_factor;
    expand_ = PointwiseConv<T>(name_ + ".expand", c_in, hidden, true, init);
    depthwise_ = DepthwiseConv<T>(name_ + ".depthwise", hidden, 3, stride, 1, true, init);
    project_ = PointwiseConv<T>(name_ + ".project", hidden, c_out, true, init);
}

template <typename T>
Tensor<T> IRBlock<T>::forward(const Tensor<T>& x) const {
    require_feature_map(name_, x.shape(), c_in_);
    Tensor<T> h = ops::relu6(expand_.forward(x));
    h = ops::relu6(depthwise_.forward(h));
    h = project_.forward(h);
    return use_residual_ ? ops::add(h, x) : h;
}

template <typename T>
Shape IRBlock<T>::output_shape(const Shape& in) const {
    return project_.output_shape(depthwise_.output_shape(expand_.output_shape(in)));
}

template <typename T>
Shape IRBlock<T>::count_flops(const Shape& in, FlopsReport& report) const {
    return project_.count_flops(depthwise_.count_flops(expand_.count_flops(in, report), report), report);
}

template <typename T>
void IRBlock<T>::collect(ParameterList<T>& out) const {
    expand_.collect(out);
    depthwise_.collect(out);
    project_.collect(out);
}

// ---------------------------------------------------------------- UpBlock

template <typename T>
UpBlock<T>::UpBlock(std::string name, int c_in, int c_out, int expansion_factor, const Initializer& init)
    : name_(std::move(name)),
      deconv_(name_ + ".deconv", c_in, c_out, 2, 2, true, init),
      refine_(name_ + ".ir", c_out, c_out, 1, expansion_factor, init) {}

template <typename T>
Tensor<T> UpBlock<T>::forward(const Tensor<T>& x) const {
    return refine_.forward(deconv_.forward(x));
}

template <typename T>
Shape UpBlock<T>::output_shape(const Shape& in) const {
    return refine_.output_shape(deconv_.output_shape(in));
}

template <typename T>
Shape UpBlock<T>::count_flops(const Shape& in, FlopsReport& report) const {
    return refine_.count_flops(deconv_.count_flops(in, report), report);
}

template <typename T>
void UpBlock<T>::collect(ParameterList<T>& out) const {
    deconv_.collect(out);
    refine_.collect(out);
}

template Tensor<float> Initializer::kaiming<float>(const std::string&, Shape, int) const;
template Tensor<double> Initializer::kaiming<double>(const std::string&, Shape, int) const;
template Tensor<float> Initializer::zeros<float>(Shape) const;
template Tensor<double> Initializer::zeros<double>(Shape) const;

template class Conv2d<float>;
template class Conv2d<double>;
template class PointwiseConv<float>;
template class PointwiseConv<double>;
template class DepthwiseConv<float>;
template class DepthwiseConv<double>;
template class ConvTranspose<float>;
template class ConvTranspose<double>;
template class DSConvLayer<float>;
template class DSConvLayer<double>;
template class IRBlock<float>;
template class IRBlock<double>;
template class UpBlock<float>;
template class UpBlock<double>;

}  // namespace pamunet
