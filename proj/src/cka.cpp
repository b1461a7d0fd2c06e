#include "pamunet/cka.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include "pamunet/autograd.hpp"
#include "pamunet/random.hpp"

namespace pamunet {

namespace {

Matrix centered(const Matrix& m) {
    Matrix c = m;
    for (int j = 0; j < m.cols; ++j) {
        double mean = 0.0;
        for (int i = 0; i < m.rows; ++i) mean += m(i, j);
        mean /= m.rows;
        for (int i = 0; i < m.rows; ++i) c(i, j) -= mean;
    }
    return c;
}

// X X^T, n x n. Feature counts dwarf sample counts, so the Gram form is the cheap one.
Matrix gram(const Matrix& x) {
    Matrix g(x.rows, x.rows);
    for (int a = 0; a < x.rows; ++a) {
        for (int b = a; b < x.rows; ++b) {
            const double* ra = &x.values[static_cast<std::size_t>(a) * x.cols];
            const double* rb = &x.values[static_cast<std::size_t>(b) * x.cols];
            double acc = 0.0;
            for (int k = 0; k < x.cols; ++k) acc += ra[k] * rb[k];
            g(a, b) = g(b, a) = acc;
        }
    }
    return g;
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) acc += a.values[i] * b.values[i];
    return acc;
}

}  // namespace

double cka_linear(const Matrix& x, const Matrix& y) {
    if (x.rows != y.rows) {
        throw std::invalid_argument("cka_linear: row counts differ (" + std::to_string(x.rows) + " vs " +
                                    std::to_string(y.rows) + ")");
    }
    if (x.rows < 2) throw std::invalid_argument("cka_linear: need at least 2 samples");
    // ||Yc^T Xc||_F^2 = <Kx, Ky>_F with Kx = Xc Xc^T, and ||Xc^T Xc||_F = ||Kx||_F.
    const Matrix kx = gram(centered(x));
    const Matrix ky = gram(centered(y));
    const double nx = std::sqrt(frobenius_dot(kx, kx));
    const double ny = std::sqrt(frobenius_dot(ky, ky));
    if (nx == 0.0 || ny == 0.0) return 0.0;
    return frobenius_dot(kx, ky) / (nx * ny);
}

ActivationSet capture(const PAMUNet<float>& model, const TensorF& probe, std::string model_tag,
                      const std::vector<std::string>& layers) {
    if (probe.rank() != 4 || probe.dim(0) < 4) {
        throw std::invalid_argument("capture: probe batch must hold at least 4 samples");
    }
    const std::vector<std::string> available = model.layer_names();
    for (const std::string& name : layers) {
        if (std::find(available.begin(), available.end(), name) == available.end()) {
            throw std::invalid_argument("capture: model has no layer named '" + name + "'");
        }
    }
    NoGradGuard<float> guard;
    ForwardResult<float> r = model.forward(probe, Capture::layers);
    ActivationSet set;
    set.model_tag = std::move(model_tag);
    std::uint64_t digest = fnv1a("probe");
    for (int d : probe.shape()) digest = fnv1a(std::to_string(d) + ",", digest);
    for (float v : probe.data()) {
        char bytes[sizeof v];
        std::memcpy(bytes, &v, sizeof v);
        digest = fnv1a(std::string_view(bytes, sizeof v), digest);
    }
    set.probe_digest = digest;
    const int n = probe.dim(0);
    for (const auto& [name, t] : r.activations) {
        if (!layers.empty() && std::find(layers.begin(), layers.end(), name) == layers.end()) continue;
        const int features = static_cast<int>(t.size() / static_cast<std::size_t>(n));
        Matrix m(n, features);
        std::copy(t.data().begin(), t.data().end(), m.values.begin());
        set.layers.push_back(name);
        set.matrices.push_back(std::move(m));
    }
    return set;
}

CKAMatrix cka_matrix(const ActivationSet& a, const ActivationSet& b) {
    if (a.probe_digest != b.probe_digest) {
        throw std::invalid_argument("cka_matrix: activation sets come from different probe batches");
    }
    CKAMatrix out;
    out.rows = a.layers;
    out.cols = b.layers;
    out.values = Matrix(static_cast<int>(a.layers.size()), static_cast<int>(b.layers.size()));
    for (std::size_t i = 0; i < a.matrices.size(); ++i) {
        for (std::size_t j = 0; j < b.matrices.size(); ++j) {
            out.values(static_cast<int>(i), static_cast<int>(j)) = cka_linear(a.matrices[i], b.matrices[j]);
        }
    }
    return out;
}

std::string CKAMatrix::to_csv() const {
    std::string s;
    for (const std::string& c : cols) s += "," + c;
    s += "\n";
    char buf[32];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        s += rows[i];
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const double v = std::clamp(values(static_cast<int>(i), static_cast<int>(j)), 0.0, 1.0);
            std::snprintf(buf, sizeof buf, ",%.6f", v);
            s += buf;
        }
        s += "\n";
    }
    return s;
}

}  // namespace pamunet
