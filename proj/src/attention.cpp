#include "pamunet/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <type_traits>

#include "ops_common.hpp"
#include "pamunet/ops.hpp"

namespace pamunet {

std::string_view variant_name(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::none: return "none";
        case AttentionVariant::self: return "self";
        case AttentionVariant::cross: return "cross";
        case AttentionVariant::additive: return "additive";
        case AttentionVariant::pla: return "pla";
    }
    return "?";
}

AttentionVariant parse_variant(std::string_view name) {
    for (AttentionVariant v : {AttentionVariant::none, AttentionVariant::self, AttentionVariant::cross,
                               AttentionVariant::additive, AttentionVariant::pla}) {
        if (variant_name(v) == name) return v;
    }
    throw std::invalid_argument("unknown attention variant '" + std::string(name) +
                                "' (expected none, self, cross, additive or pla)");
}

LuongResult luong_context(const std::vector<double>& s, const std::vector<std::vector<double>>& h) {
    if (h.empty()) throw std::invalid_argument("luong_context: no encoder states");
    const std::size_t dim = h.front().size();
    if (s.size() != dim) throw ShapeError("luong_context: decoder state and encoder states differ in size");
    LuongResult r;
    r.weights.resize(h.size());
    double mx = -INFINITY;
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (h[i].size() != dim) throw ShapeError("luong_context: encoder states differ in size");
        double score = 0.0;
        for (std::size_t d = 0; d < dim; ++d) score += s[d] * h[i][d];
        r.weights[i] = score;
        mx = std::max(mx, score);
    }
    double total = 0.0;
    for (double& w : r.weights) {
        w = std::exp(w - mx);
        total += w;
    }
    r.context.assign(dim, 0.0);
    for (std::size_t i = 0; i < h.size(); ++i) {
        r.weights[i] /= total;
        for (std::size_t d = 0; d < dim; ++d) r.context[d] += r.weights[i] * h[i][d];
    }
    return r;
}

template <typename T>
AttentionResult<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
        throw ShapeError("attention: Q, K and V must be (N, L, d) token tensors");
    }
    if (q.dim(2) != k.dim(2)) {
        throw ShapeError("attention: query depth " + std::to_string(q.dim(2)) + " differs from key depth " +
                         std::to_string(k.dim(2)));
    }
    if (k.dim(1) != v.dim(1) || k.dim(0) != v.dim(0) || q.dim(0) != k.dim(0)) {
        throw ShapeError("attention: K " + to_string(k.shape()) + " and V " + to_string(v.shape()) +
                         " do not pair with Q " + to_string(q.shape()));
    }
    const T scale = T(1) / std::sqrt(static_cast<T>(q.dim(2)));
    Tensor<T> scores = ops::mul(ops::matmul(q, ops::transpose(k)), scale);
    Tensor<T> weights = ops::softmax(scores, -1);
    return {ops::matmul(weights, v), weights};
}

namespace {

/// Rational minimax tanh for float (about 4e-7 absolute error); double keeps std::tanh.
template <typename T>
T score_tanh(T x) {
    if constexpr (std::is_same_v<T, float>) {
        constexpr float c = 7.90531110763549805f;
        x = std::clamp(x, -c, c);
        const float x2 = x * x;
        float p = -2.76076847742355e-16f;
        p = p * x2 + 2.00018790482477e-13f;
        p = p * x2 + -8.60467152213735e-11f;
        p = p * x2 + 5.12229709037114e-08f;
        p = p * x2 + 1.48572235717979e-05f;
        p = p * x2 + 6.37261928875436e-04f;
        p = p * x2 + 4.89352455891786e-03f;
        float q = 1.19825839466702e-06f;
        q = q * x2 + 1.18534705686654e-04f;
        q = q * x2 + 2.26843463243900e-03f;
        q = q * x2 + 4.89352518554385e-03f;
        return x * p / q;
    } else {
        return std::tanh(x);
    }
}

}  // namespace

template <typename T>
Tensor<T> additive_scores(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& w) {
    if (a.rank() != 3 || b.rank() != 3 || w.rank() != 1) {
        throw ShapeError("additive_scores: expected a (N, Lq, D), b (N, Lk, D), w (D)");
    }
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || w.dim(0) != a.dim(2)) {
        throw ShapeError("additive_scores: incompatible shapes " + to_string(a.shape()) + ", " +
                         to_string(b.shape()) + ", " + to_string(w.shape()));
    }
    const int n = a.dim(0), lq = a.dim(1), lk = b.dim(1), depth = a.dim(2);
    Tensor<T> out = Tensor<T>::zeros({n, lq, lk});
    {
        const T* pa = a.data().data();
        const T* pb = b.data().data();
        const T* pw = w.data().data();
        T* o = out.mutable_data().data();
        for (int s = 0; s < n; ++s) {
            for (int i = 0; i < lq; ++i) {
                const T* ai = pa + (static_cast<std::size_t>(s) * lq + i) * depth;
                T* orow = o + (static_cast<std::size_t>(s) * lq + i) * lk;
                for (int j = 0; j < lk; ++j) {
                    const T* bj = pb + (static_cast<std::size_t>(s) * lk + j) * depth;
                    T acc = T(0);
                    for (int d = 0; d < depth; ++d) acc += pw[d] * score_tanh(ai[d] + bj[d]);
                    orow[j] = acc;
                }
            }
        }
    }
    if (Tape<T>* tape = ops::detail::active_tape({&a, &b, &w})) {
        // tanh values are recomputed rather than stored: Lq * Lk * D of them.
        tape->record(OpKind::additive_scores, {&a, &b, &w}, out,
                     [ai = a.impl(), bi = b.impl(), wi = w.impl(), oi = out.impl(), n, lq, lk, depth] {
                         T* ga = ops::detail::grad_of(ai);
                         T* gb = ops::detail::grad_of(bi);
                         T* gw = ops::detail::grad_of(wi);
                         const T* pa = ai->data.data();
                         const T* pb = bi->data.data();
                         const T* pw = wi->data.data();
                         const T* g = oi->grad.data();
                         std::vector<T> ga_row(static_cast<std::size_t>(depth));
                         std::vector<T> gw_acc(static_cast<std::size_t>(depth), T(0));
                         std::vector<T> t(static_cast<std::size_t>(depth));
                         for (int s = 0; s < n; ++s) {
                             for (int i = 0; i < lq; ++i) {
                                 const std::size_t arow = (static_cast<std::size_t>(s) * lq + i) * depth;
                                 const T* grow = g + (static_cast<std::size_t>(s) * lq + i) * lk;
                                 std::fill(ga_row.begin(), ga_row.end(), T(0));
                                 for (int j = 0; j < lk; ++j) {
                                     const T gij = grow[j];
                                     if (gij == T(0)) continue;
                                     const std::size_t brow = (static_cast<std::size_t>(s) * lk + j) * depth;
                                     for (int d = 0; d < depth; ++d) t[d] = score_tanh(pa[arow + d] + pb[brow + d]);
                                     for (int d = 0; d < depth; ++d) {
                                         const T inner = gij * pw[d] * (T(1) - t[d] * t[d]);
                                         ga_row[d] += inner;
                                         if (gb) gb[brow + d] += inner;
                                         gw_acc[d] += gij * t[d];
                                     }
                                 }
                                 if (ga) {
                                     for (int d = 0; d < depth; ++d) ga[arow + d] += ga_row[d];
                                 }
                             }
                         }
                         if (gw) {
                             for (int d = 0; d < depth; ++d) gw[d] += gw_acc[d];
                         }
                     });
    }
    return out;
}

// ---------------------------------------------------------------- AttentionGate

template <typename T>
void AttentionGate<T>::remember(const Tensor<T>& weights) const {
    if (weights.dim(1) <= kMaxStoredAttentionPositions && weights.dim(2) <= kMaxStoredAttentionPositions) {
        last_attention_ = weights.detach();
    } else {
        last_attention_ = Tensor<T>();
    }
}

template <typename T>
void AttentionGate<T>::require_same_grid(const std::string& layer, const Shape& a, const Shape& b) {
    if (a.size() != 4 || b.size() != 4 || a[0] != b[0] || a[2] != b[2] || a[3] != b[3]) {
        throw ShapeError(layer + ": query grid " + to_string(a) + " does not match key grid " + to_string(b));
    }
}

// ---------------------------------------------------------------- PLA

template <typename T>
PLAGate<T>::PLAGate(std::string name, int low_channels, int channels, int expansion_factor, const Initializer& init)
    : AttentionGate<T>(std::move(name)),
      low_channels_(low_channels),
      channels_(channels),
      refine_(this->name_ + ".refine", low_channels, low_channels, 1, expansion_factor, init),
      upsample_(this->name_ + ".upsample", low_channels, channels, 2, 2, false, init),
      kv_proj_(this->name_ + ".kv_proj", channels, 2 * channels, false, init) {}

template <typename T>
AttentionResult<T> PLAGate<T>::attend(const Tensor<T>& decoder_low, const Tensor<T>& encoder_residual) const {
    require_feature_map(this->name_, decoder_low.shape(), low_channels_);
    require_feature_map(this->name_ + " query", encoder_residual.shape(), channels_);
    Tensor<T> x = upsample_.forward(refine_.forward(decoder_low));
    this->require_same_grid(this->name_, encoder_residual.shape(), x.shape());
    std::vector<Tensor<T>> kv = ops::split(kv_proj_.forward(x), 1, 2);
    Tensor<T> q = ops::to_tokens(encoder_residual);
    AttentionResult<T> r = scaled_dot_attention(q, ops::to_tokens(kv[0]), ops::to_tokens(kv[1]));
    this->remember(r.weights);
    r.output = ops::from_tokens(r.output, x.dim(2), x.dim(3));
    return r;
}

template <typename T>
AttentionResult<T> PLAGate<T>::forward(const Tensor<T>& low, const Tensor<T>&, const Tensor<T>& skip) const {
    return attend(low, skip);
}

template <typename T>
void PLAGate<T>::count_flops(const Shape& low, const Shape&, FlopsReport& report) const {
    Shape x = upsample_.count_flops(refine_.count_flops(low, report), report);
    kv_proj_.count_flops(x, report);
    const int tokens = x[2] * x[3];
    report.add(this->name_ + ".scores", "attention", flops::attention_macs(x[0], tokens, tokens, channels_));
    report.add(this->name_ + ".values", "attention", flops::attention_macs(x[0], tokens, tokens, channels_));
}

template <typename T>
void PLAGate<T>::collect(ParameterList<T>& out) const {
    refine_.collect(out);
    upsample_.collect(out);
    kv_proj_.collect(out);
}

// ---------------------------------------------------------------- self

template <typename T>
SelfAttentionGate<T>::SelfAttentionGate(std::string name, int channels, const Initializer& init)
    : AttentionGate<T>(std::move(name)),
      channels_(channels),
      qkv_proj_(this->name_ + ".qkv_proj", channels, 3 * channels, false, init) {}

template <typename T>
AttentionResult<T> SelfAttentionGate<T>::attend(const Tensor<T>& x) const {
    require_feature_map(this->name_, x.shape(), channels_);
    std::vector<Tensor<T>> qkv = ops::split(qkv_proj_.forward(x), 1, 3);
    AttentionResult<T> r =
        scaled_dot_attention(ops::to_tokens(qkv[0]), ops::to_tokens(qkv[1]), ops::to_tokens(qkv[2]));
    this->remember(r.weights);
    r.output = ops::from_tokens(r.output, x.dim(2), x.dim(3));
    return r;
}

template <typename T>
AttentionResult<T> SelfAttentionGate<T>::forward(const Tensor<T>&, const Tensor<T>& up, const Tensor<T>&) const {
    return attend(up);
}

template <typename T>
void SelfAttentionGate<T>::count_flops(const Shape&, const Shape& up, FlopsReport& report) const {
    qkv_proj_.count_flops(up, report);
    const int tokens = up[2] * up[3];
    report.add(this->name_ + ".scores", "attention", flops::attention_macs(up[0], tokens, tokens, channels_));
    report.add(this->name_ + ".values", "attention", flops::attention_macs(up[0], tokens, tokens, channels_));
}

template <typename T>
void SelfAttentionGate<T>::collect(ParameterList<T>& out) const {
    qkv_proj_.collect(out);
}

// ---------------------------------------------------------------- cross

template <typename T>
CrossAttentionGate<T>::CrossAttentionGate(std::string name, int channels, const Initializer& init)
    : AttentionGate<T>(std::move(name)),
      channels_(channels),
      q_proj_(this->name_ + ".q_proj", channels, channels, false, init),
      kv_proj_(this->name_ + ".kv_proj", channels, 2 * channels, false, init) {}

template <typename T>
AttentionResult<T> CrossAttentionGate<T>::attend(const Tensor<T>& q_src, const Tensor<T>& kv_src) const {
    require_feature_map(this->name_ + " query", q_src.shape(), channels_);
    require_feature_map(this->name_, kv_src.shape(), channels_);
    this->require_same_grid(this->name_, q_src.shape(), kv_src.shape());
    std::vector<Tensor<T>> kv = ops::split(kv_proj_.forward(kv_src), 1, 2);
    AttentionResult<T> r = scaled_dot_attention(ops::to_tokens(q_proj_.forward(q_src)), ops::to_tokens(kv[0]),
                                                ops::to_tokens(kv[1]));
    this->remember(r.weights);
    r.output = ops::from_tokens(r.output, q_src.dim(2), q_src.dim(3));
    return r;
}

template <typename T>
AttentionResult<T> CrossAttentionGate<T>::forward(const Tensor<T>&, const Tensor<T>& up,
                                                  const Tensor<T>& skip) const {
    return attend(skip, up);
}

template <typename T>
void CrossAttentionGate<T>::count_flops(const Shape&, const Shape& up, FlopsReport& report) const {
    q_proj_.count_flops(up, report);
    kv_proj_.count_flops(up, report);
    const int tokens = up[2] * up[3];
    report.add(this->name_ + ".scores", "attention", flops::attention_macs(up[0], tokens, tokens, channels_));
    report.add(this->name_ + ".values", "attention", flops::attention_macs(up[0], tokens, tokens, channels_));
}

template <typename T>
void CrossAttentionGate<T>::collect(ParameterList<T>& out) const {
    q_proj_.collect(out);
    kv_proj_.collect(out);
}

// ---------------------------------------------------------------- additive

template <typename T>
AdditiveAttentionGate<T>::AdditiveAttentionGate(std::string name, int channels, const Initializer& init)
    : AttentionGate<T>(std::move(name)),
      channels_(channels),
      w1_(this->name_ + ".w1", channels, channels, false, init),
      w2_(this->name_ + ".w2", channels, channels, false, init),
      v_proj_(this->name_ + ".v_proj", channels, channels, false, init) {
    score_ = init.kaiming<T>(this->name_ + ".score", {channels}, channels);
}

template <typename T>
AttentionResult<T> AdditiveAttentionGate<T>::attend(const Tensor<T>& q_src, const Tensor<T>& kv_src) const {
    require_feature_map(this->name_ + " query", q_src.shape(), channels_);
    require_feature_map(this->name_, kv_src.shape(), channels_);
    this->require_same_grid(this->name_, q_src.shape(), kv_src.shape());
    Tensor<T> scores = additive_scores(ops::to_tokens(w1_.forward(q_src)), ops::to_tokens(w2_.forward(kv_src)), score_);
    Tensor<T> weights = ops::softmax(scores, -1);
    this->remember(weights);
    Tensor<T> out = ops::matmul(weights, ops::to_tokens(v_proj_.forward(kv_src)));
    return {ops::from_tokens(out, q_src.dim(2), q_src.dim(3)), weights};
}

template <typename T>
AttentionResult<T> AdditiveAttentionGate<T>::forward(const Tensor<T>&, const Tensor<T>& up,
                                                     const Tensor<T>& skip) const {
    return attend(skip, up);
}

template <typename T>
void AdditiveAttentionGate<T>::count_flops(const Shape&, const Shape& up, FlopsReport& report) const {
    w1_.count_flops(up, report);
    w2_.count_flops(up, report);
    v_proj_.count_flops(up, report);
    const int tokens = up[2] * up[3];
    report.add(this->name_ + ".scores", "attention", flops::attention_macs(up[0], tokens, tokens, channels_));
    report.add(this->name_ + ".values", "attention", flops::attention_macs(up[0], tokens, tokens, channels_));
}

template <typename T>
void AdditiveAttentionGate<T>::collect(ParameterList<T>& out) const {
    w1_.collect(out);
    w2_.collect(out);
    v_proj_.collect(out);
    out.push_back({this->name_ + ".score", score_});
}

template <typename T>
std::unique_ptr<AttentionGate<T>> make_gate(AttentionVariant variant, const std::string& name, int low_channels,
                                            int channels, int expansion_factor, const Initializer& init) {
    switch (variant) {
        case AttentionVariant::none: return nullptr;
        case AttentionVariant::self: return std::make_unique<SelfAttentionGate<T>>(name, channels, init);
        case AttentionVariant::cross: return std::make_unique<CrossAttentionGate<T>>(name, channels, init);
        case AttentionVariant::additive: return std::make_unique<AdditiveAttentionGate<T>>(name, channels, init);
        case AttentionVariant::pla:
            return std::make_unique<PLAGate<T>>(name, low_channels, channels, expansion_factor, init);
    }
    return nullptr;
}

#define PAMUNET_INSTANTIATE_ATTENTION(T)                                                                  \
    template AttentionResult<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> additive_scores(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
    template class AttentionGate<T>;                                                                      \
    template class PLAGate<T>;                                                                            \
    template class SelfAttentionGate<T>;                                                                  \
    template class CrossAttentionGate<T>;                                                                 \
    template class AdditiveAttentionGate<T>;                                                              \
    template std::unique_ptr<AttentionGate<T>> make_gate(AttentionVariant, const std::string&, int, int, int, \
                                                         const Initializer&);

PAMUNET_INSTANTIATE_ATTENTION(float)
PAMUNET_INSTANTIATE_ATTENTION(double)

}  // namespace pamunet
