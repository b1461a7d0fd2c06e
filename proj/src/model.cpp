#include "pamunet/model.hpp"

#include <cmath>
#include <sstream>

#include "pamunet/autograd.hpp"
#include "pamunet/ops.hpp"

namespace pamunet {

std::string_view decoder_name(DecoderKind kind) {
    return kind == DecoderKind::vanilla ? "vanilla" : "mobile";
}

DecoderKind parse_decoder(std::string_view name) {
    if (name == "vanilla") return DecoderKind::vanilla;
    if (name == "mobile") return DecoderKind::mobile;
    throw std::invalid_argument("unknown decoder kind '" + std::string(name) + "' (expected vanilla or mobile)");
}

std::vector<int> PAMUNetConfig::channels() const {
    if (!channel_schedule.empty()) return channel_schedule;
    std::vector<int> c;
    for (int i = 0; i < levels; ++i) c.push_back(base_channels << i);
    return c;
}

void PAMUNetConfig::validate() const {
    if (levels < 1 || levels > 8) throw ConfigError("levels must be in [1, 8], got " + std::to_string(levels));
    if (channel_schedule.empty() && base_channels < 1) throw ConfigError("base_channels must be positive");
    if (!channel_schedule.empty() && static_cast<int>(channel_schedule.size()) != levels) {
        throw ConfigError("channel_schedule has " + std::to_string(channel_schedule.size()) +
                          " entries but levels is " + std::to_string(levels));
    }
    for (int c : channels()) {
        if (c < 1) throw ConfigError("channel counts must be positive");
    }
    if (expansion_factor < 1) throw ConfigError("expansion_factor must be >= 1");
    if (in_channels != 1 && in_channels != 3) throw ConfigError("in_channels must be 1 or 3");
    if (stem_stride != 1 && stem_stride != 2) throw ConfigError("stem_stride must be 1 or 2");
    if (decoder_kind == DecoderKind::vanilla && attention_variant != AttentionVariant::none) {
        throw ConfigError("attention gates require the mobile decoder");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0, 1)");
    if (!(lambda_reg >= 0.0)) throw ConfigError("lambda_reg must be non-negative");
    const int d = size_divisor();
    if (height < 1 || width < 1 || height % d != 0 || width % d != 0) {
        throw ConfigError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by " + std::to_string(d) + " (stem stride " +
                          std::to_string(stem_stride) + " times 2^" + std::to_string(levels) + ")");
    }
}

nlohmann::json PAMUNetConfig::to_json() const {
    return nlohmann::json{
        {"levels", levels},
        {"base_channels", base_channels},
        {"channel_schedule", channel_schedule},
        {"expansion_factor", expansion_factor},
        {"attention_variant", std::string(variant_name(attention_variant))},
        {"decoder_kind", std::string(decoder_name(decoder_kind))},
        {"input_size", {height, width}},
        {"in_channels", in_channels},
        {"stem_stride", stem_stride},
        {"threshold", threshold},
        {"lambda_reg", lambda_reg},
        {"zero_init_gates", zero_init_gates},
    };
}

PAMUNetConfig PAMUNetConfig::from_json(const nlohmann::json& j, PAMUNetConfig base) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    PAMUNetConfig c = std::move(base);
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "levels") c.levels = value.get<int>();
            else if (key == "base_channels") c.base_channels = value.get<int>();
            else if (key == "channel_schedule") c.channel_schedule = value.get<std::vector<int>>();
            else if (key == "expansion_factor") c.expansion_factor = value.get<int>();
            else if (key == "attention_variant") c.attention_variant = parse_variant(value.get<std::string>());
            else if (key == "decoder_kind") c.decoder_kind = parse_decoder(value.get<std::string>());
            else if (key == "input_size") {
                auto hw = value.get<std::vector<int>>();
                if (hw.size() != 2) throw ConfigError("input_size must be [height, width]");
                c.height = hw[0];
                c.width = hw[1];
            } else if (key == "in_channels") c.in_channels = value.get<int>();
            else if (key == "stem_stride") c.stem_stride = value.get<int>();
            else if (key == "threshold") c.threshold = value.get<double>();
            else if (key == "lambda_reg") c.lambda_reg = value.get<double>();
            else if (key == "zero_init_gates") c.zero_init_gates = value.get<bool>();
            else throw ConfigError("unknown model config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model config: ") + e.what());
    }
    return c;
}

PAMUNetConfig PAMUNetConfig::tiny() {
    PAMUNetConfig c;
    c.levels = 2;
    c.base_channels = 8;
    c.height = c.width = 32;
    c.stem_stride = 1;
    return c;
}

PAMUNetConfig PAMUNetConfig::gradcheck() {
    PAMUNetConfig c;
    c.levels = 2;
    c.base_channels = 4;
    c.height = c.width = 16;
    return c;
}

// ---------------------------------------------------------------- PAMUNet

template <typename T>
PAMUNet<T>::PAMUNet(PAMUNetConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    config_.validate();
    const Initializer init{seed, false};
    const Initializer gate_init = config_.zero_init_gates ? init.zeroed() : init;
    const std::vector<int> c = config_.channels();
    const int levels = config_.levels;
    const int t = config_.expansion_factor;
    const int s = config_.stem_stride;

    stem_ = Conv2d<T>("stem", config_.in_channels, c[0], 3, s, 1, true, init);
    for (int i = 0; i < levels; ++i) {
        const std::string p = "enc" + std::to_string(i);
        const int c_prev = i == 0 ? c[0] : c[static_cast<std::size_t>(i) - 1];
        const int ci = c[static_cast<std::size_t>(i)];
        encoder_.push_back({IRBlock<T>(p + ".ir0", c_prev, ci, 1, t, init), IRBlock<T>(p + ".ir1", ci, ci, 2, t, init)});
    }
    const int deepest = c.back();
    const std::string bp = "enc" + std::to_string(levels);
    bottleneck_ = IRBlock<T>(bp + ".ir", deepest, 2 * deepest, 1, t, init);
    reduce_ = PointwiseConv<T>(bp + ".reduce", 2 * deepest, deepest, true, init);

    for (int i = 0; i < levels; ++i) {
        const std::string p = "dec" + std::to_string(i);
        const std::size_t level = static_cast<std::size_t>(levels - 1 - i);
        const int ch = c[level];
        const int low = i == 0 ? deepest : c[level + 1];
        DecoderStage stage;
        if (config_.decoder_kind == DecoderKind::vanilla) {
            stage.plain_up = ConvTranspose<T>(p + ".up", low, ch, 2, 2, true, init);
            stage.plain_fuse = Conv2d<T>(p + ".fuse", 2 * ch, ch, 3, 1, 1, true, init);
        } else {
            stage.up = UpBlock<T>(p + ".up", low, ch, t, init);
            stage.gate = make_gate<T>(config_.attention_variant, p + ".gate", low, ch, t, gate_init);
            stage.fuse = DSConvLayer<T>(p + ".fuse", 2 * ch, ch, 3, 1, 1, init);
        }
        decoder_.push_back(std::move(stage));
    }
    head_ = ConvTranspose<T>("head", c[0], 1, s, s, true, init);
}

template <typename T>
PAMUNet<T>::~PAMUNet() = default;

template <typename T>
void PAMUNet<T>::require_input(const Shape& shape) const {
    if (shape.size() != 4 || shape[1] != config_.in_channels || shape[2] != config_.height ||
        shape[3] != config_.width) {
        throw ShapeError("model input must be (N, " + std::to_string(config_.in_channels) + ", " +
                         std::to_string(config_.height) + ", " + std::to_string(config_.width) + "), got " +
                         to_string(shape));
    }
}

template <typename T>
ForwardResult<T> PAMUNet<T>::forward(const Tensor<T>& x, Capture capture) const {
    require_input(x.shape());
    ForwardResult<T> r;
    auto keep = [&](const std::string& name, const Tensor<T>& t, bool contract) {
        if (capture == Capture::trace || (capture == Capture::layers && contract)) r.activations.push_back({name, t});
    };
    const int levels = config_.levels;

    Tensor<T> h = ops::relu6(stem_.forward(x));
    keep("stem", h, false);
    std::vector<Tensor<T>> skips;
    for (int i = 0; i < levels; ++i) {
        const std::string p = "enc" + std::to_string(i);
        const EncoderStage& stage = encoder_[static_cast<std::size_t>(i)];
        h = stage.ir0.forward(h);
        keep(p + ".ir0", h, false);
        skips.push_back(h);
        h = stage.ir1.forward(h);
        keep(p + ".ir1", h, true);
    }
    const std::string bp = "enc" + std::to_string(levels);
    h = bottleneck_.forward(h);
    keep(bp + ".ir", h, false);
    h = ops::relu6(reduce_.forward(h));
    keep(bp + ".reduce", h, true);

    for (int i = 0; i < levels; ++i) {
        const std::string p = "dec" + std::to_string(i);
        const DecoderStage& stage = decoder_[static_cast<std::size_t>(i)];
        const Tensor<T>& skip = skips[static_cast<std::size_t>(levels - 1 - i)];
        if (config_.decoder_kind == DecoderKind::vanilla) {
            Tensor<T> up = ops::relu6(stage.plain_up.forward(h));
            keep(p + ".up", up, true);
            h = ops::relu6(stage.plain_fuse.forward(ops::concat<T>({up, skip}, 1)));
        } else {
            Tensor<T> up = stage.up.forward(h);
            if (stage.gate) {
                keep(p + ".up", up, false);
                AttentionResult<T> a = stage.gate->forward(h, up, skip);
                r.gate_maps.push_back(a.weights);
                up = ops::add(up, a.output);
                keep(p + ".gate", up, true);
            } else {
                keep(p + ".up", up, true);
            }
            h = ops::relu6(stage.fuse.forward(ops::concat<T>({up, skip}, 1)));
        }
        keep(p + ".fuse", h, false);
    }
    r.logits = head_.forward(h);
    keep("head", r.logits, true);
    return r;
}

template <typename T>
Tensor<T> threshold_logits(const Tensor<T>& logits, double threshold) {
    std::vector<T> mask(logits.size());
    const auto z = logits.data();
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(z[i])));
        mask[i] = p >= threshold ? T(1) : T(0);
    }
    return Tensor<T>(logits.shape(), std::move(mask));
}

template <typename T>
Tensor<T> PAMUNet<T>::predict_mask(const Tensor<T>& x) const {
    NoGradGuard<T> guard;
    return threshold_logits(forward(x).logits, config_.threshold);
}

template <typename T>
ParameterList<T> PAMUNet<T>::parameters() const {
    ParameterList<T> out;
    stem_.collect(out);
    for (const EncoderStage& s : encoder_) {
        s.ir0.collect(out);
        s.ir1.collect(out);
    }
    bottleneck_.collect(out);
    reduce_.collect(out);
    for (const DecoderStage& s : decoder_) {
        if (config_.decoder_kind == DecoderKind::vanilla) {
            s.plain_up.collect(out);
            s.plain_fuse.collect(out);
        } else {
            s.up.collect(out);
            if (s.gate) s.gate->collect(out);
            s.fuse.collect(out);
        }
    }
    head_.collect(out);
    return out;
}

template <typename T>
std::size_t PAMUNet<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.size();
    return n;
}

template <typename T>
std::string PAMUNet<T>::summary() const {
    std::ostringstream os;
    for (const auto& p : parameters()) os << p.name << ' ' << to_string(p.tensor.shape()) << '\n';
    os << "total " << parameter_count() << '\n';
    return os.str();
}

template <typename T>
std::vector<std::string> PAMUNet<T>::layer_names() const {
    std::vector<std::string> names;
    for (int i = 0; i < config_.levels; ++i) names.push_back("enc" + std::to_string(i) + ".ir1");
    names.push_back("enc" + std::to_string(config_.levels) + ".reduce");
    for (int i = 0; i < config_.levels; ++i) {
        const bool gated = decoder_[static_cast<std::size_t>(i)].gate != nullptr;
        names.push_back("dec" + std::to_string(i) + (gated ? ".gate" : ".up"));
    }
    names.push_back("head");
    return names;
}

template <typename T>
FlopsReport PAMUNet<T>::count_flops(const Shape& input_shape) const {
    require_input(input_shape);
    FlopsReport report;
    Shape h = stem_.count_flops(input_shape, report);
    std::vector<Shape> skips;
    for (const EncoderStage& s : encoder_) {
        h = s.ir0.count_flops(h, report);
        skips.push_back(h);
        h = s.ir1.count_flops(h, report);
    }
    h = reduce_.count_flops(bottleneck_.count_flops(h, report), report);
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const DecoderStage& s = decoder_[i];
        const Shape& skip = skips[skips.size() - 1 - i];
        Shape up;
        if (config_.decoder_kind == DecoderKind::vanilla) {
            up = s.plain_up.count_flops(h, report);
            Shape cat{up[0], up[1] + skip[1], up[2], up[3]};
            h = s.plain_fuse.count_flops(cat, report);
        } else {
            up = s.up.count_flops(h, report);
            if (s.gate) s.gate->count_flops(h, up, report);
            Shape cat{up[0], up[1] + skip[1], up[2], up[3]};
            h = s.fuse.count_flops(cat, report);
        }
    }
    head_.count_flops(h, report);
    return report;
}

template <typename T>
std::vector<const AttentionGate<T>*> PAMUNet<T>::gates() const {
    std::vector<const AttentionGate<T>*> out;
    for (const DecoderStage& s : decoder_) {
        if (s.gate) out.push_back(s.gate.get());
    }
    return out;
}

template class PAMUNet<float>;
template class PAMUNet<double>;
template Tensor<float> threshold_logits(const Tensor<float>&, double);
template Tensor<double> threshold_logits(const Tensor<double>&, double);

}  // namespace pamunet
