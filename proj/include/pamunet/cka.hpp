#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pamunet/model.hpp"

namespace pamunet {

/// Row-major (rows x cols) matrix of doubles.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, 0.0) {}
    double& operator()(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

/// Linear CKA of column-centered X and Y: ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F).
/// Returns 0 when either representation is constant.
double cka_linear(const Matrix& x, const Matrix& y);

struct ActivationSet {
    std::string model_tag;
    std::vector<std::string> layers;
    std::vector<Matrix> matrices;  // one (samples x features) matrix per layer
    /// Hash of the probe batch, used to refuse comparing different probes.
    std::uint64_t probe_digest = 0;
};

/// Flattens contract layers of `model` on `probe` (N >= 4 samples) into per-layer matrices.
/// An empty `layers` selects every contract layer; a name the model lacks is an error.
/// Layers always come back in contract order.
ActivationSet capture(const PAMUNet<float>& model, const TensorF& probe, std::string model_tag,
                      const std::vector<std::string>& layers = {});

struct CKAMatrix {
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    Matrix values;

    /// Header of column names after an empty corner cell; values clamped to [0, 1], 6 decimals.
    std::string to_csv() const;
};

CKAMatrix cka_matrix(const ActivationSet& a, const ActivationSet& b);

}  // namespace pamunet
