#include "pamunet/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pamunet/autograd.hpp"
#include "pamunet/losses.hpp"
#include "pamunet/ops.hpp"
#include "pamunet/random.hpp"

namespace pamunet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (!(lambda_reg >= 0.0)) throw ConfigError("lambda_reg must be non-negative");
    if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"lr", lr},
                          {"momentum", momentum},
                          {"weight_decay", weight_decay},
                          {"batch_size", batch_size},
                          {"epochs", epochs},
                          {"seed", seed},
                          {"lambda_reg", lambda_reg},
                          {"augment", augment},
                          {"max_steps", max_steps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig base) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    TrainConfig c = base;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "lr") c.lr = value.get<double>();
            else if (key == "momentum") c.momentum = value.get<double>();
            else if (key == "weight_decay") c.weight_decay = value.get<double>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "epochs") c.epochs = value.get<int>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "lambda_reg") c.lambda_reg = value.get<double>();
            else if (key == "augment") c.augment = value.get<bool>();
            else if (key == "max_steps") c.max_steps = value.get<int>();
            else throw ConfigError("unknown train config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed train config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------- optimizer

template <typename T>
void sgd_step(std::span<T> w, std::span<const T> g, std::span<T> v, T lr, T momentum, T weight_decay) {
    if (w.size() != g.size() || w.size() != v.size()) {
        throw std::invalid_argument("sgd_step: weights, gradients and velocities differ in length");
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
        const T gi = g[i] + weight_decay * w[i];
        v[i] = momentum * v[i] + gi;
        w[i] -= lr * v[i];
    }
}

template void sgd_step(std::span<float>, std::span<const float>, std::span<float>, float, float, float);
template void sgd_step(std::span<double>, std::span<const double>, std::span<double>, double, double, double);

std::string EpochLog::csv_row() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f", epoch, seg_loss, reg_loss, total_loss, train_dice);
    return buf;
}

// ---------------------------------------------------------------- parameters

std::vector<NamedBlob> snapshot_parameters(const PAMUNet<float>& model) {
    std::vector<NamedBlob> out;
    for (const auto& [name, t] : model.parameters()) {
        out.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
    }
    return out;
}

void load_parameters(const PAMUNet<float>& model, const std::vector<NamedBlob>& params) {
    ParameterList<float> live = model.parameters();
    if (live.size() != params.size()) {
        throw DataError("checkpoint holds " + std::to_string(params.size()) + " parameter tensors, model has " +
                        std::to_string(live.size()));
    }
    for (std::size_t i = 0; i < live.size(); ++i) {
        if (live[i].name != params[i].name || live[i].tensor.shape() != params[i].shape) {
            throw DataError("checkpoint parameter '" + params[i].name + "' " + to_string(params[i].shape) +
                            " does not match model parameter '" + live[i].name + "' " +
                            to_string(live[i].tensor.shape()));
        }
        std::copy(params[i].values.begin(), params[i].values.end(), live[i].tensor.mutable_data().begin());
    }
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'P', 'A', 'M', 'C', 'K', 'P', 'T', '\0'};

nlohmann::json blob_index(const std::vector<NamedBlob>& blobs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const NamedBlob& b : blobs) arr.push_back({{"name", b.name}, {"shape", b.shape}});
    return arr;
}

template <typename U>
void put(std::string& out, U value) {
    char bytes[sizeof(U)];
    std::memcpy(bytes, &value, sizeof(U));
    out.append(bytes, sizeof(U));
}

template <typename U>
U take(std::string_view bytes, std::size_t& pos) {
    if (pos + sizeof(U) > bytes.size()) throw DataError("checkpoint truncated");
    U value;
    std::memcpy(&value, bytes.data() + pos, sizeof(U));
    pos += sizeof(U);
    return value;
}

std::vector<NamedBlob> read_blobs(const nlohmann::json& index, std::string_view bytes, std::size_t& pos) {
    std::vector<NamedBlob> out;
    for (const auto& entry : index) {
        NamedBlob b{entry.at("name").get<std::string>(), entry.at("shape").get<Shape>(), {}};
        const std::size_t n = numel(b.shape);
        if (pos + n * sizeof(float) > bytes.size()) throw DataError("checkpoint truncated in blob '" + b.name + "'");
        b.values.resize(n);
        std::memcpy(b.values.data(), bytes.data() + pos, n * sizeof(float));
        pos += n * sizeof(float);
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace

std::string Checkpoint::serialize() const {
    nlohmann::json header{{"model", model.to_json()},
                          {"model_seed", model_seed},
                          {"train", train.to_json()},
                          {"epoch", epoch},
                          {"steps", steps},
                          {"rng", {{"seed", rng_seed}, {"next_epoch", rng_next_epoch}}},
                          {"params", blob_index(params)},
                          {"velocity", blob_index(velocity)}};
    const std::string text = header.dump();
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, text.size());
    out += text;
    for (const auto* group : {&params, &velocity}) {
        for (const NamedBlob& b : *group) {
            out.append(reinterpret_cast<const char*>(b.values.data()), b.values.size() * sizeof(float));
        }
    }
    return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
    if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw DataError("not a checkpoint (bad magic)");
    }
    std::size_t pos = sizeof kMagic;
    const auto version = take<std::uint32_t>(bytes, pos);
    if (version != kVersion) {
        throw DataError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                        std::to_string(kVersion) + ")");
    }
    const auto length = take<std::uint64_t>(bytes, pos);
    if (pos + length > bytes.size()) throw DataError("checkpoint truncated in header");
    Checkpoint c;
    try {
        const auto header = nlohmann::json::parse(bytes.substr(pos, length));
        pos += length;
        c.model = PAMUNetConfig::from_json(header.at("model"));
        c.model_seed = header.at("model_seed").get<std::uint64_t>();
        c.train = TrainConfig::from_json(header.at("train"));
        c.epoch = header.at("epoch").get<int>();
        c.steps = header.at("steps").get<int>();
        c.rng_seed = header.at("rng").at("seed").get<std::uint64_t>();
        c.rng_next_epoch = header.at("rng").at("next_epoch").get<int>();
        c.params = read_blobs(header.at("params"), bytes, pos);
        c.velocity = read_blobs(header.at("velocity"), bytes, pos);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("malformed checkpoint header: ") + e.what());
    }
    if (pos != bytes.size()) throw DataError("checkpoint has trailing bytes");
    return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

PAMUNet<float> Checkpoint::build_model() const {
    PAMUNet<float> m(model, model_seed);
    load_parameters(m, params);
    return m;
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(PAMUNet<float>& model, TrainConfig config)
    : model_(model), config_(std::move(config)), params_(model.parameters()) {
    config_.validate();
    for (const auto& p : params_) velocity_.emplace_back(p.tensor.size(), 0.0f);
}

Trainer::Trainer(PAMUNet<float>& model, const Checkpoint& resume) : Trainer(model, resume.train) {
    if (!(resume.model == model.config())) throw DataError("checkpoint was written for a different model config");
    load_parameters(model_, resume.params);
    if (resume.velocity.size() != velocity_.size()) throw DataError("checkpoint velocity count mismatch");
    for (std::size_t i = 0; i < velocity_.size(); ++i) {
        if (resume.velocity[i].values.size() != velocity_[i].size()) {
            throw DataError("checkpoint velocity '" + resume.velocity[i].name + "' has the wrong size");
        }
        velocity_[i] = resume.velocity[i].values;
    }
    epoch_ = resume.rng_next_epoch;
    steps_ = resume.steps;
}

std::vector<std::size_t> Trainer::permutation(std::uint64_t seed, int epoch, std::size_t count) {
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(Rng::mix(seed, fnv1a("shuffle")), static_cast<std::uint64_t>(epoch));
    for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

bool Trainer::finished() const {
    return epoch_ >= config_.epochs || (config_.max_steps > 0 && steps_ >= config_.max_steps);
}

void Trainer::step(const TensorF& images, const TensorF& masks, EpochLog& log, int batch_index) {
    const int n = images.dim(0);
    LossBreakdown<float> loss;
    TensorF logits;
    {
        Tape<float> tape;
        ForwardResult<float> fr = model_.forward(images);
        logits = fr.logits;
        loss = total_loss(ops::sigmoid(fr.logits), masks, fr.gate_maps, static_cast<float>(config_.lambda_reg));
        if (!std::isfinite(loss.total.item())) {
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch_) + " batch " +
                               std::to_string(batch_index) + "; first non-finite layer: " +
                               locate_non_finite(model_, images));
        }
        tape.backward(loss.total);
    }
    const auto lr = static_cast<float>(config_.lr);
    const auto mu = static_cast<float>(config_.momentum);
    const auto wd = static_cast<float>(config_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        TensorF& p = params_[i].tensor;
        if (p.has_grad()) {
            std::vector<float> g = p.grad();
            sgd_step<float>(p.mutable_data(), g, velocity_[i], lr, mu, wd);
        } else {
            std::vector<float> zero(p.size(), 0.0f);
            sgd_step<float>(p.mutable_data(), zero, velocity_[i], lr, mu, wd);
        }
        p.zero_grad();
    }
    ++steps_;

    const TensorF pred = threshold_logits(logits, model_.config().threshold);
    const std::size_t plane = pred.size() / static_cast<std::size_t>(n);
    for (int s = 0; s < n; ++s) {
        const std::size_t off = static_cast<std::size_t>(s) * plane;
        std::vector<double> p(pred.data().begin() + off, pred.data().begin() + off + plane);
        std::vector<double> g(masks.data().begin() + off, masks.data().begin() + off + plane);
        log.train_dice += dice(confusion(p, g));
    }
    log.seg_loss += static_cast<double>(loss.seg.item()) * n;
    log.reg_loss += static_cast<double>(loss.reg.item()) * n;
    log.total_loss += static_cast<double>(loss.total.item()) * n;
    ++log.steps;
}

EpochLog Trainer::run_epoch(const std::vector<Sample>& train) {
    if (train.empty()) throw DataError("training split is empty");
    EpochLog log;
    log.epoch = epoch_;
    const std::vector<std::size_t> order = permutation(config_.seed, epoch_, train.size());
    Rng aug_rng(Rng::mix(config_.seed, fnv1a("augment")), static_cast<std::uint64_t>(epoch_));
    std::size_t seen = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch_size)) {
        if (config_.max_steps > 0 && steps_ >= config_.max_steps) break;
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
        std::vector<Sample> batch;
        for (std::size_t i = start; i < end; ++i) {
            const Sample& s = train[order[i]];
            if (config_.augment) {
                batch.push_back(augment(s, static_cast<Augment>(aug_rng.below(6))));
            } else {
                batch.push_back(s);
            }
        }
        std::vector<std::size_t> idx(batch.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        TensorF images, masks;
        make_batch(batch, idx, images, masks);
        step(images, masks, log, batch_index++);
        seen += batch.size();
    }
    if (seen > 0) {
        const double n = static_cast<double>(seen);
        log.seg_loss /= n;
        log.reg_loss /= n;
        log.total_loss /= n;
        log.train_dice /= n;
    }
    ++epoch_;
    return log;
}

std::vector<EpochLog> Trainer::fit(const std::vector<Sample>& train,
                                   const std::function<void(const EpochLog&)>& on_epoch) {
    std::vector<EpochLog> logs;
    while (!finished()) {
        logs.push_back(run_epoch(train));
        if (on_epoch) on_epoch(logs.back());
    }
    return logs;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.model = model_.config();
    c.model_seed = model_.seed();
    c.train = config_;
    c.epoch = epoch_;
    c.steps = steps_;
    c.rng_seed = config_.seed;
    c.rng_next_epoch = epoch_;
    c.params = snapshot_parameters(model_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        c.velocity.push_back({params_[i].name, params_[i].tensor.shape(), velocity_[i]});
    }
    return c;
}

std::string locate_non_finite(const PAMUNet<float>& model, const TensorF& images) {
    auto finite = [](const TensorF& t) {
        for (float v : t.data()) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    };
    if (!finite(images)) return "input";
    {
        NoGradGuard<float> guard;
        ForwardResult<float> r = model.forward(images, Capture::trace);
        for (const auto& [name, t] : r.activations) {
            if (!finite(t)) return name;
        }
        for (std::size_t i = 0; i < r.gate_maps.size(); ++i) {
            if (!finite(r.gate_maps[i])) return "attention map " + std::to_string(i);
        }
    }
    for (const auto& [name, t] : model.parameters()) {
        if (!finite(t)) return name;
    }
    return "loss";
}

MetricReport evaluate(const PAMUNet<float>& model, const std::vector<Sample>& samples, int batch_size) {
    if (samples.empty()) throw DataError("evaluation split is empty");
    MetricReport report;
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        TensorF images, masks;
        make_batch(samples, idx, images, masks);
        const TensorF pred = model.predict_mask(images);
        const std::size_t plane = pred.size() / idx.size();
        for (std::size_t s = 0; s < idx.size(); ++s) {
            const std::size_t off = s * plane;
            std::vector<double> p(pred.data().begin() + off, pred.data().begin() + off + plane);
            std::vector<double> g(masks.data().begin() + off, masks.data().begin() + off + plane);
            report.add(samples[idx[s]].id, confusion(p, g));
        }
    }
    return report;
}

}  // namespace pamunet
