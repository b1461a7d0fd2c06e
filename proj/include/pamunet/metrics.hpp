#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pamunet/tensor.hpp"

namespace pamunet {

inline constexpr double kMetricSmoothing = 1e-6;

struct Confusion {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Counts over two binary masks of equal size. Throws on non-binary values.
Confusion confusion(const std::vector<double>& pred, const std::vector<double>& gt);

template <typename T>
Confusion confusion(const Tensor<T>& pred, const Tensor<T>& gt);

/// (2 TP + s) / (|P| + |G| + s)
double dice(const Confusion& c);
/// (TP + s) / (TP + FP + FN + s)
double foreground_iou(const Confusion& c);
/// (TN + s) / (TN + FP + FN + s)
double background_iou(const Confusion& c);
/// Mean of foreground and background IoU.
double miou(const Confusion& c);
/// (TP + s) / (TP + FN + s)
double recall(const Confusion& c);

template <typename T>
double dice(const Tensor<T>& pred, const Tensor<T>& gt) {
    return dice(confusion(pred, gt));
}
template <typename T>
double miou(const Tensor<T>& pred, const Tensor<T>& gt) {
    return miou(confusion(pred, gt));
}
template <typename T>
double recall(const Tensor<T>& pred, const Tensor<T>& gt) {
    return recall(confusion(pred, gt));
}

struct MetricReport {
    struct Row {
        std::string id;
        double dice = 0, miou = 0, recall = 0;
    };
    std::vector<Row> samples;
    double mean_dice = 0, mean_miou = 0, mean_recall = 0;

    void add(std::string id, const Confusion& c);
    /// Recomputes the means from the per-sample rows.
    void finalize();
    /// `id,dice,miou,recall` rows followed by a `mean` row.
    std::string to_csv() const;
};

}  // namespace pamunet
