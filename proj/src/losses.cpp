#include "pamunet/losses.hpp"

#include <cmath>

#include "ops_common.hpp"
#include "pamunet/ops.hpp"

namespace pamunet {

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("bce_loss: prediction " + to_string(pred.shape()) + " and target " +
                         to_string(target.shape()) + " differ");
    }
    for (T y : target.data()) {
        if (y != T(0) && y != T(1)) throw std::invalid_argument("bce_loss: target values must be 0 or 1");
    }
    const T lo = static_cast<T>(kBceEpsilon);
    const T hi = T(1) - static_cast<T>(kBceEpsilon);
    const auto p = pred.data();
    const auto y = target.data();
    const std::size_t n = p.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const T q = std::min(std::max(p[i], lo), hi);
        acc += y[i] == T(1) ? std::log(static_cast<double>(q)) : std::log1p(-static_cast<double>(q));
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(-acc / static_cast<double>(n)));
    if (Tape<T>* tape = ops::detail::active_tape({&pred, &target})) {
        tape->record(OpKind::bce, {&pred, &target}, out, [pi = pred.impl(), yi = target.impl(), oi = out.impl(), lo, hi] {
            T* gp = ops::detail::grad_of(pi);
            if (!gp) return;
            const std::size_t n = pi->data.size();
            const T scale = oi->grad[0] / static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const T q = pi->data[i];
                if (!(q > lo && q < hi)) continue;
                gp[i] += yi->data[i] == T(1) ? -scale / q : scale / (T(1) - q);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> attention_reg(const std::vector<Tensor<T>>& maps) {
    if (maps.empty()) return Tensor<T>::scalar(T(0));
    Tensor<T> acc = ops::variance(maps.front());
    for (std::size_t i = 1; i < maps.size(); ++i) acc = ops::add(acc, ops::variance(maps[i]));
    return maps.size() == 1 ? acc : ops::mul(acc, T(1) / static_cast<T>(maps.size()));
}

template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<Tensor<T>>& maps,
                            T lambda) {
    if (!(lambda >= T(0))) throw std::invalid_argument("total_loss: lambda must be non-negative");
    LossBreakdown<T> b;
    b.lambda = lambda;
    b.seg = bce_loss(pred, target);
    b.reg = attention_reg(maps);
    b.total = ops::add(b.seg, ops::mul(b.reg, lambda));
    return b;
}

#define PAMUNET_INSTANTIATE_LOSSES(T)                                   \
    template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&);    \
    template Tensor<T> attention_reg(const std::vector<Tensor<T>>&);    \
    template LossBreakdown<T> total_loss(const Tensor<T>&, const Tensor<T>&, const std::vector<Tensor<T>>&, T);

PAMUNET_INSTANTIATE_LOSSES(float)
PAMUNET_INSTANTIATE_LOSSES(double)

}  // namespace pamunet
