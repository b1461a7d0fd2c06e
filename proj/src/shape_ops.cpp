#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ops_common.hpp"
#include "pamunet/ops.hpp"

namespace pamunet::ops {

using detail::active_tape;
using detail::grad_of;
using detail::ImplPtr;

namespace {

int normalize_axis(const char* op, int axis, int rank) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    }
    return a;
}

// C[b] (+)= A[b] * B[b] with optional transposes expressed through index strides.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::size_t>(i) * n;
        const T* arow = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T, A (m, k), B (n, k)
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<std::size_t>(j) * k;
            // Independent lanes let the compiler vectorize; they are summed in a fixed order.
            constexpr int kLanes = 8;
            T lane[kLanes] = {};
            int p = 0;
            for (; p + kLanes <= k; p += kLanes) {
                for (int l = 0; l < kLanes; ++l) lane[l] += arow[p + l] * brow[p + l];
            }
            T acc = T(0);
            for (; p < k; ++p) acc += arow[p] * brow[p];
            for (int l = 0; l < kLanes; ++l) acc += lane[l];
            crow[j] += acc;
        }
    }
}

// C += A^T * B, A (k, m), B (k, n)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const T* arow = a + static_cast<std::size_t>(p) * m;
        const T* brow = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * static_cast<std::size_t>(shape[i]);
    return s;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const bool batched = a.rank() == 3;
    if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3))) {
        throw ShapeError("matmul: expected two rank-2 or two rank-3 tensors, got " + to_string(a.shape()) +
                         " and " + to_string(b.shape()));
    }
    const int batch = batched ? a.dim(0) : 1;
    if (batched && b.dim(0) != batch) {
        throw ShapeError("matmul: batch axis 0 differs: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    const int m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    if (b.dim(-2) != k) {
        throw ShapeError("matmul: inner axis mismatch, a axis " + std::to_string(a.rank() - 1) + " is " +
                         std::to_string(k) + " but b axis " + std::to_string(b.rank() - 2) + " is " +
                         std::to_string(b.dim(-2)));
    }
    Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const std::size_t sa = static_cast<std::size_t>(m) * k;
    const std::size_t sb = static_cast<std::size_t>(k) * n;
    const std::size_t sc = static_cast<std::size_t>(m) * n;
    for (int bi = 0; bi < batch; ++bi) {
        gemm_nn(a.data().data() + bi * sa, b.data().data() + bi * sb, out.mutable_data().data() + bi * sc, m, k, n);
    }
    if (Tape<T>* tape = active_tape({&a, &b})) {
        tape->record(OpKind::matmul, {&a, &b}, out, [ai = a.impl(), bi_ = b.impl(), oi = out.impl(), batch, m, k, n, sa, sb, sc] {
            T* ga = grad_of(ai);
            T* gb = grad_of(bi_);
            const T* g = oi->grad.data();
            for (int bi = 0; bi < batch; ++bi) {
                // dA = dC B^T ; dB = A^T dC
                if (ga) gemm_nt(g + bi * sc, bi_->data.data() + bi * sb, ga + bi * sa, m, n, k);
                if (gb) gemm_tn(ai->data.data() + bi * sa, g + bi * sc, gb + bi * sb, k, m, n);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.rank() < 2) throw ShapeError("transpose: rank must be >= 2, got " + to_string(x.shape()));
    std::vector<int> axes(static_cast<std::size_t>(x.rank()));
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(x, axes);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
    if (Tape<T>* tape = active_tape({&x})) {
        tape->record(OpKind::reshape, {&x}, out, [xi = x.impl(), oi = out.impl()] {
            T* gx = grad_of(xi);
            const T* g = oi->grad.data();
            for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
    const std::size_t r = static_cast<std::size_t>(x.rank());
    if (axes.size() != r) throw ShapeError("permute: axis list length does not match rank of " + to_string(x.shape()));
    std::vector<bool> seen(r, false);
    for (int a : axes) {
        if (a < 0 || static_cast<std::size_t>(a) >= r || seen[static_cast<std::size_t>(a)]) {
            throw ShapeError("permute: invalid axis permutation for " + to_string(x.shape()));
        }
        seen[static_cast<std::size_t>(a)] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[static_cast<std::size_t>(axes[i])];
    const std::vector<std::size_t> in_strides = contiguous_strides(x.shape());
    // source stride for each output axis
    std::vector<std::size_t> src(r);
    for (std::size_t i = 0; i < r; ++i) src[i] = in_strides[static_cast<std::size_t>(axes[i])];

    // map[o] = flat input index of output element o
    std::vector<std::size_t> map(x.size());
    {
        std::vector<int> idx(r, 0);
        std::size_t offset = 0;
        for (std::size_t o = 0; o < map.size(); ++o) {
            map[o] = offset;
            for (std::size_t d = r; d-- > 0;) {
                offset += src[d];
                if (++idx[d] < out_shape[d]) break;
                offset -= src[d] * static_cast<std::size_t>(out_shape[d]);
                idx[d] = 0;
            }
        }
    }
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    {
        const T* in = x.data().data();
        T* o = out.mutable_data().data();
        for (std::size_t i = 0; i < map.size(); ++i) o[i] = in[map[i]];
    }
    if (Tape<T>* tape = active_tape({&x})) {
        tape->record(OpKind::permute, {&x}, out, [xi = x.impl(), oi = out.impl(), map = std::move(map)] {
            T* gx = grad_of(xi);
            const T* g = oi->grad.data();
            for (std::size_t i = 0; i < map.size(); ++i) gx[map[i]] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const int a = normalize_axis("softmax", axis, x.rank());
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < a; ++i) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
    for (std::size_t i = static_cast<std::size_t>(a) + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
    const std::size_t len = static_cast<std::size_t>(s[static_cast<std::size_t>(a)]);
    Tensor<T> out = Tensor<T>::zeros(s);
    {
        const T* in = x.data().data();
        T* o = out.mutable_data().data();
        for (std::size_t p = 0; p < outer; ++p) {
            for (std::size_t q = 0; q < inner; ++q) {
                const std::size_t base = p * len * inner + q;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
                T total = T(0);
                for (std::size_t j = 0; j < len; ++j) {
                    const T e = std::exp(in[base + j * inner] - mx);
                    o[base + j * inner] = e;
                    total += e;
                }
                const T inv = T(1) / total;
                for (std::size_t j = 0; j < len; ++j) o[base + j * inner] *= inv;
            }
        }
    }
    if (Tape<T>* tape = active_tape({&x})) {
        tape->record(OpKind::softmax, {&x}, out, [xi = x.impl(), oi = out.impl(), outer, inner, len] {
            T* gx = grad_of(xi);
            const T* g = oi->grad.data();
            const T* y = oi->data.data();
            for (std::size_t p = 0; p < outer; ++p) {
                for (std::size_t q = 0; q < inner; ++q) {
                    const std::size_t base = p * len * inner + q;
                    T dot = T(0);
                    for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t i = base + j * inner;
                        gx[i] += y[i] * (g[i] - dot);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = T(0);
    for (T v : x.data()) total += v;
    Tensor<T> out = Tensor<T>::scalar(total);
    if (Tape<T>* tape = active_tape({&x})) {
        tape->record(OpKind::sum, {&x}, out, [xi = x.impl(), oi = out.impl()] {
            T* gx = grad_of(xi);
            const T g = oi->grad[0];
            for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    T total = T(0);
    for (T v : x.data()) total += v;
    const T n = static_cast<T>(x.size());
    Tensor<T> out = Tensor<T>::scalar(total / n);
    if (Tape<T>* tape = active_tape({&x})) {
        tape->record(OpKind::mean, {&x}, out, [xi = x.impl(), oi = out.impl(), n] {
            T* gx = grad_of(xi);
            const T g = oi->grad[0] / n;
            for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> variance(const Tensor<T>& x) {
    if (x.size() == 0) throw ShapeError("variance: empty tensor");
    const T n = static_cast<T>(x.size());
    // Shifting by the first entry keeps constant inputs at exactly zero variance.
    const T shift = x.data()[0];
    T total = T(0);
    for (T v : x.data()) total += v - shift;
    const T mu = total / n;
    T sq = T(0);
    for (T v : x.data()) sq += (v - shift - mu) * (v - shift - mu);
    Tensor<T> out = Tensor<T>::scalar(sq / n);
    if (Tape<T>* tape = active_tape({&x})) {
        tape->record(OpKind::variance, {&x}, out, [xi = x.impl(), oi = out.impl(), n, mu, shift] {
            T* gx = grad_of(xi);
            const T g = oi->grad[0] * T(2) / n;
            const T* v = xi->data.data();
            for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g * (v[i] - shift - mu);
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: empty tensor list");
    const Shape& first = parts.front().shape();
    const int a = normalize_axis("concat", axis, static_cast<int>(first.size()));
    Shape out_shape = first;
    out_shape[static_cast<std::size_t>(a)] = 0;
    for (const Tensor<T>& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) throw ShapeError("concat: rank mismatch " + to_string(s) + " vs " + to_string(first));
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (static_cast<int>(i) != a && s[i] != first[i]) {
                throw ShapeError("concat: axis " + std::to_string(i) + " differs: " + to_string(s) + " vs " + to_string(first));
            }
        }
        out_shape[static_cast<std::size_t>(a)] += s[static_cast<std::size_t>(a)];
    }
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < a; ++i) outer *= static_cast<std::size_t>(first[static_cast<std::size_t>(i)]);
    for (std::size_t i = static_cast<std::size_t>(a) + 1; i < first.size(); ++i) inner *= static_cast<std::size_t>(first[i]);
    const std::size_t out_len = static_cast<std::size_t>(out_shape[static_cast<std::size_t>(a)]) * inner;

    Tensor<T> out = Tensor<T>::zeros(out_shape);
    std::vector<std::size_t> chunk;  // per-part contiguous block size per outer index
    std::vector<std::size_t> offset;
    {
        std::size_t off = 0;
        for (const Tensor<T>& p : parts) {
            chunk.push_back(static_cast<std::size_t>(p.shape()[static_cast<std::size_t>(a)]) * inner);
            offset.push_back(off);
            off += chunk.back();
        }
    }
    T* o = out.mutable_data().data();
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const T* src = parts[k].data().data();
        for (std::size_t p = 0; p < outer; ++p) {
            std::copy_n(src + p * chunk[k], chunk[k], o + p * out_len + offset[k]);
        }
    }
    if (Tape<T>* tape = active_tape(parts)) {
        std::vector<ImplPtr<T>> impls;
        for (const Tensor<T>& p : parts) impls.push_back(p.impl());
        tape->record(OpKind::concat, parts, out, [impls, oi = out.impl(), chunk, offset, outer, out_len] {
            const T* g = oi->grad.data();
            for (std::size_t k = 0; k < impls.size(); ++k) {
                T* gp = grad_of(impls[k]);
                if (!gp) continue;
                for (std::size_t p = 0; p < outer; ++p) {
                    const T* src = g + p * out_len + offset[k];
                    T* dst = gp + p * chunk[k];
                    for (std::size_t i = 0; i < chunk[k]; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int axis, int parts) {
    const int a = normalize_axis("split", axis, x.rank());
    const int extent = x.dim(a);
    if (parts < 1 || extent % parts != 0) {
        throw ShapeError("split: " + std::to_string(parts) + " parts do not divide axis " + std::to_string(a) +
                         " of extent " + std::to_string(extent));
    }
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < a; ++i) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
    for (std::size_t i = static_cast<std::size_t>(a) + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
    const std::size_t in_len = static_cast<std::size_t>(extent) * inner;
    const std::size_t chunk = in_len / static_cast<std::size_t>(parts);
    Shape part_shape = s;
    part_shape[static_cast<std::size_t>(a)] = extent / parts;

    std::vector<Tensor<T>> result;
    Tape<T>* tape = active_tape({&x});
    for (int k = 0; k < parts; ++k) {
        Tensor<T> out = Tensor<T>::zeros(part_shape);
        const T* src = x.data().data();
        T* o = out.mutable_data().data();
        const std::size_t off = static_cast<std::size_t>(k) * chunk;
        for (std::size_t p = 0; p < outer; ++p) std::copy_n(src + p * in_len + off, chunk, o + p * chunk);
        if (tape) {
            tape->record(OpKind::split, {&x}, out, [xi = x.impl(), oi = out.impl(), outer, in_len, chunk, off] {
                T* gx = grad_of(xi);
                const T* g = oi->grad.data();
                for (std::size_t p = 0; p < outer; ++p) {
                    T* dst = gx + p * in_len + off;
                    const T* src = g + p * chunk;
                    for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                }
            });
        }
        result.push_back(std::move(out));
    }
    return result;
}

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("to_tokens: expected (N, C, H, W), got " + to_string(x.shape()));
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    return reshape(permute(x, {0, 2, 3, 1}), {n, h * w, c});
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& x, int height, int width) {
    if (x.rank() != 3 || x.dim(1) != height * width) {
        throw ShapeError("from_tokens: expected (N, " + std::to_string(height * width) + ", C), got " +
                         to_string(x.shape()));
    }
    const int n = x.dim(0), c = x.dim(2);
    return permute(reshape(x, {n, height, width, c}), {0, 3, 1, 2});
}

#define PAMUNET_INSTANTIATE_SHAPE(T)                                                 \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> transpose(const Tensor<T>&);                                  \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                             \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);           \
    template Tensor<T> softmax(const Tensor<T>&, int);                               \
    template Tensor<T> sum(const Tensor<T>&);                                        \
    template Tensor<T> mean(const Tensor<T>&);                                       \
    template Tensor<T> variance(const Tensor<T>&);                                   \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                   \
    template std::vector<Tensor<T>> split(const Tensor<T>&, int, int);               \
    template Tensor<T> to_tokens(const Tensor<T>&);                                  \
    template Tensor<T> from_tokens(const Tensor<T>&, int, int);

PAMUNET_INSTANTIATE_SHAPE(float)
PAMUNET_INSTANTIATE_SHAPE(double)

}  // namespace pamunet::ops
