#include <algorithm>
#include <string>

#include "ops_common.hpp"
#include "pamunet/ops.hpp"

namespace pamunet::ops {

using detail::active_tape;
using detail::grad_of;
using detail::ImplPtr;
using detail::require_axis;
using detail::require_rank;

int conv_output_extent(int input, int kernel, int stride, int padding) {
    if (stride < 1) throw ShapeError("stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw ShapeError("padding must be >= 0, got " + std::to_string(padding));
    const int span = input + 2 * padding - kernel;
    if (span < 0) {
        throw ShapeError("kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
                         std::to_string(input + 2 * padding));
    }
    return span / stride + 1;
}

int conv_transpose_output_extent(int input, int kernel, int stride) {
    if (stride != 1 && stride != 2) {
        throw ShapeError("conv_transpose2d supports stride 1 or 2, got " + std::to_string(stride));
    }
    return (input - 1) * stride + kernel;
}

namespace {

// Output rows/cols [lo, hi) whose input coordinate out*stride + offset - padding lies in [0, extent).
struct Range {
    int lo;
    int hi;
};

Range valid_range(int out_extent, int in_extent, int offset, int stride, int padding) {
    // out*stride + offset - padding >= 0
    const int shift = padding - offset;
    int lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
    // out*stride + offset - padding <= in_extent - 1
    const int top = in_extent - 1 + padding - offset;
    int hi = top < 0 ? 0 : top / stride + 1;
    lo = std::min(lo, out_extent);
    hi = std::clamp(hi, lo, out_extent);
    return {lo, hi};
}

// Shared sweep for dense and depthwise convolution. `fn(in_plane, k_weight_index, out_plane)`
// style loops are inlined here for speed.
template <typename T, bool Depthwise>
void conv_forward(const T* in, const T* w, T* out, int n_batch, int c_in, int h, int wd, int c_out,
                  int k, int stride, int pad, int oh_n, int ow_n) {
    const std::size_t in_plane = static_cast<std::size_t>(h) * wd;
    const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;
    for (int n = 0; n < n_batch; ++n) {
        for (int co = 0; co < c_out; ++co) {
            T* o = out + (static_cast<std::size_t>(n) * c_out + co) * out_plane;
            const int ci_begin = Depthwise ? co : 0;
            const int ci_end = Depthwise ? co + 1 : c_in;
            for (int ci = ci_begin; ci < ci_end; ++ci) {
                const T* x = in + (static_cast<std::size_t>(n) * c_in + ci) * in_plane;
                const T* wk = Depthwise ? w + static_cast<std::size_t>(co) * k * k
                                        : w + (static_cast<std::size_t>(co) * c_in + ci) * k * k;
                for (int kh = 0; kh < k; ++kh) {
                    const Range rh = valid_range(oh_n, h, kh, stride, pad);
                    for (int kw = 0; kw < k; ++kw) {
                        const T wv = wk[kh * k + kw];
                        const Range rw = valid_range(ow_n, wd, kw, stride, pad);
                        for (int oh = rh.lo; oh < rh.hi; ++oh) {
                            const T* xr = x + static_cast<std::size_t>(oh * stride + kh - pad) * wd;
                            T* orow = o + static_cast<std::size_t>(oh) * ow_n;
                            if (stride == 1) {
                                const T* xs = xr + (kw - pad);
                                for (int ow = rw.lo; ow < rw.hi; ++ow) orow[ow] += wv * xs[ow];
                            } else {
                                for (int ow = rw.lo; ow < rw.hi; ++ow) {
                                    orow[ow] += wv * xr[ow * stride + kw - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T, bool Depthwise>
void conv_backward(const T* in, const T* w, const T* gout, T* gin, T* gw, int n_batch, int c_in,
                   int h, int wd, int c_out, int k, int stride, int pad, int oh_n, int ow_n) {
    const std::size_t in_plane = static_cast<std::size_t>(h) * wd;
    const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;
    for (int n = 0; n < n_batch; ++n) {
        for (int co = 0; co < c_out; ++co) {
            const T* g = gout + (static_cast<std::size_t>(n) * c_out + co) * out_plane;
            const int ci_begin = Depthwise ? co : 0;
            const int ci_end = Depthwise ? co + 1 : c_in;
            for (int ci = ci_begin; ci < ci_end; ++ci) {
                const std::size_t in_off = (static_cast<std::size_t>(n) * c_in + ci) * in_plane;
                const std::size_t w_off = Depthwise ? static_cast<std::size_t>(co) * k * k
                                                    : (static_cast<std::size_t>(co) * c_in + ci) * k * k;
                for (int kh = 0; kh < k; ++kh) {
                    const Range rh = valid_range(oh_n, h, kh, stride, pad);
                    for (int kw = 0; kw < k; ++kw) {
                        const Range rw = valid_range(ow_n, wd, kw, stride, pad);
                        const T wv = w[w_off + kh * k + kw];
                        T acc = T(0);
                        for (int oh = rh.lo; oh < rh.hi; ++oh) {
                            const std::size_t row = in_off + static_cast<std::size_t>(oh * stride + kh - pad) * wd;
                            const T* grow = g + static_cast<std::size_t>(oh) * ow_n;
                            for (int ow = rw.lo; ow < rw.hi; ++ow) {
                                const std::size_t idx = row + static_cast<std::size_t>(ow * stride + kw - pad);
                                if (gin) gin[idx] += wv * grow[ow];
                                acc += in[idx] * grow[ow];
                            }
                        }
                        if (gw) gw[w_off + kh * k + kw] += acc;
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int padding) {
    require_rank("conv2d", "input", input.shape(), 4);
    require_rank("conv2d", "kernel", kernel.shape(), 4);
    require_axis("conv2d", "input", input.shape(), "kernel", kernel.shape(), 1, 1);
    if (kernel.dim(2) != kernel.dim(3)) {
        throw ShapeError("conv2d: kernel must be square, got " + to_string(kernel.shape()));
    }
    const int n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int co = kernel.dim(0), k = kernel.dim(2);
    const int oh = conv_output_extent(h, k, stride, padding);
    const int ow = conv_output_extent(w, k, stride, padding);
    Tensor<T> out = Tensor<T>::zeros({n, co, oh, ow});
    conv_forward<T, false>(input.data().data(), kernel.data().data(), out.mutable_data().data(), n, ci,
                           h, w, co, k, stride, padding, oh, ow);
    if (Tape<T>* tape = active_tape({&input, &kernel})) {
        tape->record(OpKind::conv2d, {&input, &kernel}, out,
                     [xi = input.impl(), ki = kernel.impl(), oi = out.impl(), n, ci, h, w, co, k, stride,
                      padding, oh, ow] {
                         conv_backward<T, false>(xi->data.data(), ki->data.data(), oi->grad.data(),
                                                 grad_of(xi), grad_of(ki), n, ci, h, w, co, k, stride,
                                                 padding, oh, ow);
                     });
    }
    return out;
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int padding) {
    require_rank("depthwise_conv2d", "input", input.shape(), 4);
    require_rank("depthwise_conv2d", "kernel", kernel.shape(), 4);
    require_axis("depthwise_conv2d", "input", input.shape(), "kernel", kernel.shape(), 1, 0);
    if (kernel.dim(1) != 1) {
        throw ShapeError("depthwise_conv2d: kernel axis 1 must be 1, got " + to_string(kernel.shape()));
    }
    if (kernel.dim(2) != kernel.dim(3)) {
        throw ShapeError("depthwise_conv2d: kernel must be square, got " + to_string(kernel.shape()));
    }
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int k = kernel.dim(2);
    const int oh = conv_output_extent(h, k, stride, padding);
    const int ow = conv_output_extent(w, k, stride, padding);
    Tensor<T> out = Tensor<T>::zeros({n, c, oh, ow});
    conv_forward<T, true>(input.data().data(), kernel.data().data(), out.mutable_data().data(), n, c, h,
                          w, c, k, stride, padding, oh, ow);
    if (Tape<T>* tape = active_tape({&input, &kernel})) {
        tape->record(OpKind::depthwise_conv2d, {&input, &kernel}, out,
                     [xi = input.impl(), ki = kernel.impl(), oi = out.impl(), n, c, h, w, k, stride,
                      padding, oh, ow] {
                         conv_backward<T, true>(xi->data.data(), ki->data.data(), oi->grad.data(),
                                                grad_of(xi), grad_of(ki), n, c, h, w, c, k, stride,
                                                padding, oh, ow);
                     });
    }
    return out;
}

template <typename T>
Tensor<T> pointwise_conv2d(const Tensor<T>& input, const Tensor<T>& kernel) {
    require_rank("pointwise_conv2d", "input", input.shape(), 4);
    require_rank("pointwise_conv2d", "kernel", kernel.shape(), 4);
    require_axis("pointwise_conv2d", "input", input.shape(), "kernel", kernel.shape(), 1, 1);
    if (kernel.dim(2) != 1 || kernel.dim(3) != 1) {
        throw ShapeError("pointwise_conv2d: kernel must be (C_out, C_in, 1, 1), got " +
                         to_string(kernel.shape()));
    }
    const int n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int co = kernel.dim(0);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> out = Tensor<T>::zeros({n, co, h, w});
    {
        const T* x = input.data().data();
        const T* wk = kernel.data().data();
        T* o = out.mutable_data().data();
        for (int b = 0; b < n; ++b) {
            for (int oc = 0; oc < co; ++oc) {
                T* orow = o + (static_cast<std::size_t>(b) * co + oc) * plane;
                for (int ic = 0; ic < ci; ++ic) {
                    const T wv = wk[static_cast<std::size_t>(oc) * ci + ic];
                    const T* xrow = x + (static_cast<std::size_t>(b) * ci + ic) * plane;
                    for (std::size_t p = 0; p < plane; ++p) orow[p] += wv * xrow[p];
                }
            }
        }
    }
    if (Tape<T>* tape = active_tape({&input, &kernel})) {
        tape->record(OpKind::pointwise_conv2d, {&input, &kernel}, out,
                     [xi = input.impl(), ki = kernel.impl(), oi = out.impl(), n, ci, co, plane] {
                         const T* x = xi->data.data();
                         const T* wk = ki->data.data();
                         const T* g = oi->grad.data();
                         T* gx = grad_of(xi);
                         T* gw = grad_of(ki);
                         for (int b = 0; b < n; ++b) {
                             for (int oc = 0; oc < co; ++oc) {
                                 const T* grow = g + (static_cast<std::size_t>(b) * co + oc) * plane;
                                 for (int ic = 0; ic < ci; ++ic) {
                                     const std::size_t widx = static_cast<std::size_t>(oc) * ci + ic;
                                     const std::size_t xoff = (static_cast<std::size_t>(b) * ci + ic) * plane;
                                     if (gx) {
                                         const T wv = wk[widx];
                                         T* gxrow = gx + xoff;
                                         for (std::size_t p = 0; p < plane; ++p) gxrow[p] += wv * grow[p];
                                     }
                                     if (gw) {
                                         const T* xrow = x + xoff;
                                         T acc = T(0);
                                         for (std::size_t p = 0; p < plane; ++p) acc += xrow[p] * grow[p];
                                         gw[widx] += acc;
                                     }
                                 }
                             }
                         }
                     });
    }
    return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride) {
    require_rank("conv_transpose2d", "input", input.shape(), 4);
    require_rank("conv_transpose2d", "kernel", kernel.shape(), 4);
    require_axis("conv_transpose2d", "input", input.shape(), "kernel", kernel.shape(), 1, 0);
    if (kernel.dim(2) != kernel.dim(3)) {
        throw ShapeError("conv_transpose2d: kernel must be square, got " + to_string(kernel.shape()));
    }
    const int n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int co = kernel.dim(1), k = kernel.dim(2);
    const int oh = conv_transpose_output_extent(h, k, stride);
    const int ow = conv_transpose_output_extent(w, k, stride);
    const std::size_t in_plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    Tensor<T> out = Tensor<T>::zeros({n, co, oh, ow});
    {
        const T* x = input.data().data();
        const T* wk = kernel.data().data();
        T* o = out.mutable_data().data();
        for (int b = 0; b < n; ++b) {
            for (int ic = 0; ic < ci; ++ic) {
                const T* xp = x + (static_cast<std::size_t>(b) * ci + ic) * in_plane;
                for (int oc = 0; oc < co; ++oc) {
                    T* op = o + (static_cast<std::size_t>(b) * co + oc) * out_plane;
                    const T* kp = wk + (static_cast<std::size_t>(ic) * co + oc) * k * k;
                    for (int kh = 0; kh < k; ++kh) {
                        for (int kw = 0; kw < k; ++kw) {
                            const T wv = kp[kh * k + kw];
                            for (int ih = 0; ih < h; ++ih) {
                                T* orow = op + static_cast<std::size_t>(ih * stride + kh) * ow + kw;
                                const T* xrow = xp + static_cast<std::size_t>(ih) * w;
                                for (int iw = 0; iw < w; ++iw) orow[iw * stride] += wv * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
    }
    if (Tape<T>* tape = active_tape({&input, &kernel})) {
        tape->record(OpKind::conv_transpose2d, {&input, &kernel}, out,
                     [xi = input.impl(), ki = kernel.impl(), oi = out.impl(), n, ci, co, k, h, w, ow,
                      stride, in_plane, out_plane] {
                         const T* x = xi->data.data();
                         const T* wk = ki->data.data();
                         const T* g = oi->grad.data();
                         T* gx = grad_of(xi);
                         T* gw = grad_of(ki);
                         for (int b = 0; b < n; ++b) {
                             for (int ic = 0; ic < ci; ++ic) {
                                 const std::size_t xoff = (static_cast<std::size_t>(b) * ci + ic) * in_plane;
                                 for (int oc = 0; oc < co; ++oc) {
                                     const T* gp = g + (static_cast<std::size_t>(b) * co + oc) * out_plane;
                                     const std::size_t koff = (static_cast<std::size_t>(ic) * co + oc) * k * k;
                                     for (int kh = 0; kh < k; ++kh) {
                                         for (int kw = 0; kw < k; ++kw) {
                                             const T wv = wk[koff + kh * k + kw];
                                             T acc = T(0);
                                             for (int ih = 0; ih < h; ++ih) {
                                                 const T* grow = gp + static_cast<std::size_t>(ih * stride + kh) * ow + kw;
                                                 const std::size_t xrow = xoff + static_cast<std::size_t>(ih) * w;
                                                 for (int iw = 0; iw < w; ++iw) {
                                                     const T gv = grow[iw * stride];
                                                     if (gx) gx[xrow + iw] += wv * gv;
                                                     acc += x[xrow + iw] * gv;
                                                 }
                                             }
                                             if (gw) gw[koff + kh * k + kw] += acc;
                                         }
                                     }
                                 }
                             }
                         }
                     });
    }
    return out;
}

#define PAMUNET_INSTANTIATE_CONV(T)                                                    \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, int, int);           \
    template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, int, int); \
    template Tensor<T> pointwise_conv2d(const Tensor<T>&, const Tensor<T>&);           \
    template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, int);

PAMUNET_INSTANTIATE_CONV(float)
PAMUNET_INSTANTIATE_CONV(double)

}  // namespace pamunet::ops
