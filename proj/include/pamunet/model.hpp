#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "pamunet/attention.hpp"
#include "pamunet/blocks.hpp"
#include "pamunet/flops.hpp"
#include "pamunet/tensor.hpp"

namespace pamunet {

enum class DecoderKind { vanilla, mobile };

std::string_view decoder_name(DecoderKind kind);
DecoderKind parse_decoder(std::string_view name);

class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

struct PAMUNetConfig {
    int levels = 4;
    int base_channels = 16;
    /// Empty means base_channels * 2^i.
    std::vector<int> channel_schedule;
    int expansion_factor = 6;
    AttentionVariant attention_variant = AttentionVariant::pla;
    DecoderKind decoder_kind = DecoderKind::mobile;
    int height = 128;
    int width = 128;
    int in_channels = 1;
    /// Stride of the stem conv and of the head transposed conv (1 or 2).
    int stem_stride = 2;
    double threshold = 0.5;
    double lambda_reg = 0.01;
    /// Start every attention-gate parameter at zero.
    bool zero_init_gates = false;

    std::vector<int> channels() const;
    /// Required divisor of height and width.
    int size_divisor() const { return stem_stride << levels; }
    /// Throws ConfigError describing the first violated constraint.
    void validate() const;

    nlohmann::json to_json() const;
    /// Missing keys keep their values from `base`; unknown keys are rejected.
    static PAMUNetConfig from_json(const nlohmann::json& j, PAMUNetConfig base);
    static PAMUNetConfig from_json(const nlohmann::json& j) { return from_json(j, PAMUNetConfig{}); }

    /// levels=2, base=8, stem stride 1, 32x32 grayscale, PLA.
    static PAMUNetConfig tiny();
    /// levels=2, base=4, 16x16 grayscale, PLA.
    static PAMUNetConfig gradcheck();

    bool operator==(const PAMUNetConfig&) const = default;
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;                         // (N, 1, H, W)
    std::vector<Tensor<T>> gate_maps;         // one (N, HW, HW) weight tensor per gate, decoder order
    std::vector<NamedTensor<T>> activations;  // filled when capturing
};

enum class Capture {
    none,
    /// The 2 * levels + 2 layers of the naming contract.
    layers,
    /// Every intermediate feature map, in execution order.
    trace,
};

template <typename T>
class PAMUNet {
   public:
    PAMUNet(PAMUNetConfig config, std::uint64_t seed);
    PAMUNet(PAMUNet&&) noexcept = default;
    PAMUNet& operator=(PAMUNet&&) noexcept = default;
    ~PAMUNet();

    const PAMUNetConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }

    ForwardResult<T> forward(const Tensor<T>& x, Capture capture = Capture::none) const;
    /// sigmoid(logits) >= threshold, as {0, 1}.
    Tensor<T> predict_mask(const Tensor<T>& x) const;

    /// Handles to every trainable tensor, in a fixed order.
    ParameterList<T> parameters() const;
    std::size_t parameter_count() const;
    /// One `name shape` line per parameter tensor and a total line.
    std::string summary() const;

    /// Names produced by Capture::layers, in order.
    std::vector<std::string> layer_names() const;

    FlopsReport count_flops(const Shape& input_shape) const;

    /// Gates in decoder order (empty when the variant has none).
    std::vector<const AttentionGate<T>*> gates() const;

   private:
    struct EncoderStage {
        IRBlock<T> ir0;
        IRBlock<T> ir1;
    };
    struct DecoderStage {
        // vanilla
        ConvTranspose<T> plain_up;
        Conv2d<T> plain_fuse;
        // mobile
        UpBlock<T> up;
        std::unique_ptr<AttentionGate<T>> gate;
        DSConvLayer<T> fuse;
    };

    void require_input(const Shape& shape) const;

    PAMUNetConfig config_;
    std::uint64_t seed_;
    Conv2d<T> stem_;
    std::vector<EncoderStage> encoder_;
    IRBlock<T> bottleneck_;
    PointwiseConv<T> reduce_;
    std::vector<DecoderStage> decoder_;
    ConvTranspose<T> head_;
};

/// Elementwise indicator of sigmoid(logits) >= threshold.
template <typename T>
Tensor<T> threshold_logits(const Tensor<T>& logits, double threshold);

}  // namespace pamunet
