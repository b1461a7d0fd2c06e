#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pamunet {

/// Analytic multiply-accumulate counts, one entry per layer. 1 MAC = 2 FLOPs.
/// Elementwise work (activations, bias adds, softmax) is not counted.
struct FlopsReport {
    struct Entry {
        std::string layer;
        std::string kind;
        std::uint64_t macs = 0;
    };

    std::vector<Entry> layers;

    void add(std::string layer, std::string kind, std::uint64_t macs);
    void append(const FlopsReport& other);
    std::uint64_t total_macs() const;
    std::uint64_t total_flops() const { return 2 * total_macs(); }

    /// `layer,kind,macs,flops` rows followed by a `total` row.
    std::string to_csv() const;
};

namespace flops {

std::uint64_t conv2d_macs(int batch, int kernel, int c_in, int c_out, int h_out, int w_out);
std::uint64_t depthwise_macs(int batch, int kernel, int channels, int h_out, int w_out);
std::uint64_t pointwise_macs(int batch, int c_in, int c_out, int h, int w);
/// Counted as the forward convolution it is the adjoint of: k^2 * C_in * C_out * H_in * W_in.
std::uint64_t conv_transpose_macs(int batch, int kernel, int c_in, int c_out, int h_in, int w_in);
/// One (Lq x d) by (d x Lk) product, or the matching weights-times-values product.
std::uint64_t attention_macs(int batch, int queries, int keys, int depth);

}  // namespace flops
}  // namespace pamunet
