#pragma once

#include <vector>

#include "pamunet/tensor.hpp"

namespace pamunet {

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy; predictions are clamped to [eps, 1 - eps] and the clamp
/// passes no gradient outside that range. Targets must be 0 or 1.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Mean over maps of each map's population variance; 0 for an empty list.
template <typename T>
Tensor<T> attention_reg(const std::vector<Tensor<T>>& maps);

template <typename T>
struct LossBreakdown {
    Tensor<T> seg;
    Tensor<T> reg;
    Tensor<T> total;
    T lambda = T(0);
};

/// seg + lambda * reg with seg = bce_loss(pred, target).
template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<Tensor<T>>& maps,
                            T lambda);

}  // namespace pamunet
