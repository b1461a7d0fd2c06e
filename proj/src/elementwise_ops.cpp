#include <cmath>
#include <string>

#include "ops_common.hpp"
#include "pamunet/ops.hpp"

namespace pamunet::ops {

using detail::active_tape;
using detail::grad_of;

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) +
                             " are not broadcastable on axis " + std::to_string(i));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

namespace {

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a;
    std::vector<std::size_t> stride_b;
    bool same = false;
};

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::size_t> strides(r, 0);
    std::size_t step = 1;
    for (std::size_t i = r; i-- > 0;) {
        const std::size_t k = i + in.size();
        if (k < r) break;
        const int d = in[k - r];
        strides[i] = d == 1 ? 0 : step;
        step *= static_cast<std::size_t>(d);
    }
    return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
    BroadcastPlan p;
    p.out = broadcast_shape(a, b);
    p.same = a == b;
    if (!p.same) {
        p.stride_a = broadcast_strides(a, p.out);
        p.stride_b = broadcast_strides(b, p.out);
    }
    return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    const std::size_t total = numel(p.out);
    if (p.same) {
        for (std::size_t i = 0; i < total; ++i) f(i, i, i);
        return;
    }
    const std::size_t r = p.out.size();
    if (r == 0) {
        f(0, 0, 0);
        return;
    }
    const std::size_t inner = static_cast<std::size_t>(p.out[r - 1]);
    const std::size_t sa = p.stride_a[r - 1];
    const std::size_t sb = p.stride_b[r - 1];
    std::vector<int> idx(r - 1, 0);
    for (std::size_t o = 0; o < total; o += inner) {
        std::size_t a0 = 0, b0 = 0;
        for (std::size_t d = 0; d + 1 < r; ++d) {
            a0 += static_cast<std::size_t>(idx[d]) * p.stride_a[d];
            b0 += static_cast<std::size_t>(idx[d]) * p.stride_b[d];
        }
        for (std::size_t j = 0; j < inner; ++j) f(o + j, a0 + j * sa, b0 + j * sb);
        for (std::size_t d = r - 1; d-- > 0;) {
            if (++idx[d] < p.out[d]) break;
            idx[d] = 0;
        }
    }
}

enum class Binary { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Binary kind) {
    BroadcastPlan plan = plan_broadcast(a.shape(), b.shape());
    Tensor<T> out = Tensor<T>::zeros(plan.out);
    {
        const T* x = a.data().data();
        const T* y = b.data().data();
        T* o = out.mutable_data().data();
        switch (kind) {
            case Binary::add:
                for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] + y[ib]; });
                break;
            case Binary::sub:
                for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] - y[ib]; });
                break;
            case Binary::mul:
                for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] * y[ib]; });
                break;
        }
    }
    if (Tape<T>* tape = active_tape({&a, &b})) {
        const OpKind op = kind == Binary::add ? OpKind::add : kind == Binary::sub ? OpKind::sub : OpKind::mul;
        tape->record(op, {&a, &b}, out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), plan = std::move(plan), kind] {
            const T* g = oi->grad.data();
            T* ga = grad_of(ai);
            T* gb = grad_of(bi);
            const T* x = ai->data.data();
            const T* y = bi->data.data();
            for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                switch (kind) {
                    case Binary::add:
                        if (ga) ga[ia] += g[i];
                        if (gb) gb[ib] += g[i];
                        break;
                    case Binary::sub:
                        if (ga) ga[ia] += g[i];
                        if (gb) gb[ib] -= g[i];
                        break;
                    case Binary::mul:
                        if (ga) ga[ia] += g[i] * y[ib];
                        if (gb) gb[ib] += g[i] * x[ia];
                        break;
                }
            });
        });
    }
    return out;
}

// Elementwise map with derivative expressed through input x and output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, OpKind kind, Fwd fwd, Deriv deriv) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    {
        const T* in = x.data().data();
        T* o = out.mutable_data().data();
        const std::size_t n = x.size();
        for (std::size_t i = 0; i < n; ++i) o[i] = fwd(in[i]);
    }
    if (Tape<T>* tape = active_tape({&x})) {
        tape->record(kind, {&x}, out, [xi = x.impl(), oi = out.impl(), deriv] {
            T* gx = grad_of(xi);
            if (!gx) return;
            const T* g = oi->grad.data();
            const T* in = xi->data.data();
            const T* y = oi->data.data();
            const std::size_t n = xi->data.size();
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * deriv(in[i], y[i]);
        });
    }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, Binary::add);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, Binary::sub);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, Binary::mul);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T value) {
    return unary(
        a, OpKind::shift, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, T value) {
    return unary(
        a, OpKind::scale, [value](T v) { return v * value; }, [value](T, T) { return value; });
}

template <typename T>
Tensor<T> relu6(const Tensor<T>& x) {
    return unary(
        x, OpKind::relu6, [](T v) { return std::min(std::max(v, T(0)), T(6)); },
        [](T v, T) { return (v > T(0) && v < T(6)) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary(
        x, OpKind::sigmoid,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return unary(
        x, OpKind::tanh, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary(
        x, OpKind::exp, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    return unary(
        x, OpKind::log, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lower bound exceeds upper bound");
    return unary(
        x, OpKind::clamp, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

#define PAMUNET_INSTANTIATE_ELEMENTWISE(T)                        \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> add(const Tensor<T>&, T);                \
    template Tensor<T> mul(const Tensor<T>&, T);                \
    template Tensor<T> relu6(const Tensor<T>&);                 \
    template Tensor<T> sigmoid(const Tensor<T>&);               \
    template Tensor<T> tanh(const Tensor<T>&);                  \
    template Tensor<T> exp(const Tensor<T>&);                   \
    template Tensor<T> log(const Tensor<T>&);                   \
    template Tensor<T> clamp(const Tensor<T>&, T, T);

PAMUNET_INSTANTIATE_ELEMENTWISE(float)
PAMUNET_INSTANTIATE_ELEMENTWISE(double)

}  // namespace pamunet::ops
