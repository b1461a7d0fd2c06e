#include "pamunet/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace pamunet {

namespace {

bool is_one(double v) {
    if (v == 1.0) return true;
    if (v == 0.0) return false;
    throw std::invalid_argument("metric input is not a binary mask");
}

template <typename A, typename B>
Confusion count(const A& pred, const B& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("metric inputs differ in size");
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = is_one(static_cast<double>(pred[i]));
        const bool g = is_one(static_cast<double>(gt[i]));
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double d(std::uint64_t v) { return static_cast<double>(v); }

}  // namespace

Confusion confusion(const std::vector<double>& pred, const std::vector<double>& gt) {
    return count(pred, gt);
}

template <typename T>
Confusion confusion(const Tensor<T>& pred, const Tensor<T>& gt) {
    if (pred.shape() != gt.shape()) {
        throw std::invalid_argument("metric inputs differ in shape: " + to_string(pred.shape()) + " vs " +
                                    to_string(gt.shape()));
    }
    return count(pred.data(), gt.data());
}

template Confusion confusion(const Tensor<float>&, const Tensor<float>&);
template Confusion confusion(const Tensor<double>&, const Tensor<double>&);

double dice(const Confusion& c) {
    const double s = kMetricSmoothing;
    return (2.0 * d(c.tp) + s) / (d(c.tp + c.fp) + d(c.tp + c.fn) + s);
}

double foreground_iou(const Confusion& c) {
    const double s = kMetricSmoothing;
    return (d(c.tp) + s) / (d(c.tp + c.fp + c.fn) + s);
}

double background_iou(const Confusion& c) {
    const double s = kMetricSmoothing;
    return (d(c.tn) + s) / (d(c.tn + c.fp + c.fn) + s);
}

double miou(const Confusion& c) { return 0.5 * (foreground_iou(c) + background_iou(c)); }

double recall(const Confusion& c) {
    const double s = kMetricSmoothing;
    return (d(c.tp) + s) / (d(c.tp + c.fn) + s);
}

void MetricReport::add(std::string id, const Confusion& c) {
    samples.push_back({std::move(id), dice(c), miou(c), recall(c)});
    finalize();
}

void MetricReport::finalize() {
    mean_dice = mean_miou = mean_recall = 0;
    if (samples.empty()) return;
    for (const Row& r : samples) {
        mean_dice += r.dice;
        mean_miou += r.miou;
        mean_recall += r.recall;
    }
    const double n = static_cast<double>(samples.size());
    mean_dice /= n;
    mean_miou /= n;
    mean_recall /= n;
}

std::string MetricReport::to_csv() const {
    std::string out = "id,dice,miou,recall\n";
    char buf[128];
    auto row = [&](const std::string& id, double a, double b, double c) {
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f\n", a, b, c);
        out += id;
        out += buf;
    };
    for (const Row& r : samples) row(r.id, r.dice, r.miou, r.recall);
    row("mean", mean_dice, mean_miou, mean_recall);
    return out;
}

}  // namespace pamunet
