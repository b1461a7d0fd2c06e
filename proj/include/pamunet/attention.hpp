#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "pamunet/blocks.hpp"
#include "pamunet/flops.hpp"
#include "pamunet/tensor.hpp"

namespace pamunet {

enum class AttentionVariant { none, self, cross, additive, pla };

std::string_view variant_name(AttentionVariant v);
/// Throws std::invalid_argument on unknown names.
AttentionVariant parse_variant(std::string_view name);

/// Dot-score Luong attention for one decoder state over T encoder states.
struct LuongResult {
    std::vector<double> context;
    std::vector<double> weights;
};
LuongResult luong_context(const std::vector<double>& decoder_state,
                          const std::vector<std::vector<double>>& encoder_states);

template <typename T>
struct AttentionResult {
    Tensor<T> output;   // (N, Lq, Dv) for token-level calls, (N, C, H, W) from gates
    Tensor<T> weights;  // (N, Lq, Lk), rows sum to 1
};

/// softmax(Q K^T / sqrt(d)) V over token tensors Q (N, Lq, d), K (N, Lk, d), V (N, Lk, Dv).
template <typename T>
AttentionResult<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);

/// S[n, i, j] = sum_d w[d] * tanh(a[n, i, d] + b[n, j, d]); a (N, Lq, D), b (N, Lk, D), w (D).
template <typename T>
Tensor<T> additive_scores(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& w);

/// Largest query x key grid for which a detached copy of the weights is kept.
inline constexpr int kMaxStoredAttentionPositions = 4096;

/// Attention unit sitting between a decoder up path and its encoder skip.
///
/// `low` is the next-lower decoder feature (N, C_low, h, w), `up` the decoder's own
/// upsampled stream (N, C, 2h, 2w) and `skip` the encoder residual (N, C, 2h, 2w).
/// The output is the attended map (N, C, 2h, 2w) that the decoder adds to `up`.
template <typename T>
class AttentionGate {
   public:
    virtual ~AttentionGate() = default;

    virtual AttentionVariant variant() const = 0;
    virtual AttentionResult<T> forward(const Tensor<T>& low, const Tensor<T>& up, const Tensor<T>& skip) const = 0;
    virtual void count_flops(const Shape& low, const Shape& up, FlopsReport& report) const = 0;
    virtual void collect(ParameterList<T>& out) const = 0;

    /// Weights of the most recent forward, when small enough to keep.
    const Tensor<T>& last_attention() const { return last_attention_; }
    const std::string& name() const { return name_; }

   protected:
    explicit AttentionGate(std::string name) : name_(std::move(name)) {}
    void remember(const Tensor<T>& weights) const;
    static void require_same_grid(const std::string& layer, const Shape& a, const Shape& b);

    std::string name_;
    mutable Tensor<T> last_attention_;
};

/// Progressive Luong attention: the lower decoder feature is refined by an IR block,
/// upsampled by a stride-2 transposed conv and projected to 2C channels that split into
/// K and V. The encoder residual, flattened, is the query.
template <typename T>
class PLAGate final : public AttentionGate<T> {
   public:
    PLAGate(std::string name, int low_channels, int channels, int expansion_factor, const Initializer& init);

    AttentionVariant variant() const override { return AttentionVariant::pla; }
    AttentionResult<T> forward(const Tensor<T>& low, const Tensor<T>& up, const Tensor<T>& skip) const override;
    void count_flops(const Shape& low, const Shape& up, FlopsReport& report) const override;
    void collect(ParameterList<T>& out) const override;

    /// The gate pipeline without the backbone stream.
    AttentionResult<T> attend(const Tensor<T>& decoder_low, const Tensor<T>& encoder_residual) const;
    int key_dimension() const { return channels_; }

   private:
    int low_channels_, channels_;
    IRBlock<T> refine_;
    ConvTranspose<T> upsample_;
    PointwiseConv<T> kv_proj_;
};

/// Q, K and V are all projected from the decoder stream.
template <typename T>
class SelfAttentionGate final : public AttentionGate<T> {
   public:
    SelfAttentionGate(std::string name, int channels, const Initializer& init);

    AttentionVariant variant() const override { return AttentionVariant::self; }
    AttentionResult<T> forward(const Tensor<T>& low, const Tensor<T>& up, const Tensor<T>& skip) const override;
    void count_flops(const Shape& low, const Shape& up, FlopsReport& report) const override;
    void collect(ParameterList<T>& out) const override;

    AttentionResult<T> attend(const Tensor<T>& x) const;

   private:
    int channels_;
    PointwiseConv<T> qkv_proj_;
};

/// Q projected from the encoder residual, K and V from the decoder stream.
template <typename T>
class CrossAttentionGate final : public AttentionGate<T> {
   public:
    CrossAttentionGate(std::string name, int channels, const Initializer& init);

    AttentionVariant variant() const override { return AttentionVariant::cross; }
    AttentionResult<T> forward(const Tensor<T>& low, const Tensor<T>& up, const Tensor<T>& skip) const override;
    void count_flops(const Shape& low, const Shape& up, FlopsReport& report) const override;
    void collect(ParameterList<T>& out) const override;

    AttentionResult<T> attend(const Tensor<T>& q_src, const Tensor<T>& kv_src) const;

   private:
    int channels_;
    PointwiseConv<T> q_proj_;
    PointwiseConv<T> kv_proj_;
};

/// Scores from v^T tanh(W1 q + W2 k); q from the encoder residual, k and V from the decoder stream.
template <typename T>
class AdditiveAttentionGate final : public AttentionGate<T> {
   public:
    AdditiveAttentionGate(std::string name, int channels, const Initializer& init);

    AttentionVariant variant() const override { return AttentionVariant::additive; }
    AttentionResult<T> forward(const Tensor<T>& low, const Tensor<T>& up, const Tensor<T>& skip) const override;
    void count_flops(const Shape& low, const Shape& up, FlopsReport& report) const override;
    void collect(ParameterList<T>& out) const override;

    AttentionResult<T> attend(const Tensor<T>& q_src, const Tensor<T>& kv_src) const;

    const PointwiseConv<T>& w1() const { return w1_; }
    const PointwiseConv<T>& w2() const { return w2_; }

   private:
    int channels_;
    PointwiseConv<T> w1_;
    PointwiseConv<T> w2_;
    PointwiseConv<T> v_proj_;
    Tensor<T> score_;  // (C)
};

/// Builds the gate for `variant`; returns nullptr for AttentionVariant::none.
template <typename T>
std::unique_ptr<AttentionGate<T>> make_gate(AttentionVariant variant, const std::string& name, int low_channels,
                                            int channels, int expansion_factor, const Initializer& init);

}  // namespace pamunet
