#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pamunet/data.hpp"
#include "pamunet/metrics.hpp"
#include "pamunet/model.hpp"

namespace pamunet {

/// Non-finite loss during training.
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int batch_size = 8;
    int epochs = 10;
    std::uint64_t seed = 0;
    double lambda_reg = 0.01;
    bool augment = false;
    /// Stop after this many optimizer steps; 0 means no limit.
    int max_steps = 0;

    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys keep their values from `base`; unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
    static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }
    bool operator==(const TrainConfig&) const = default;
};

/// One coupled-weight-decay momentum step: g' = g + wd w; v = mu v + g'; w -= lr v.
template <typename T>
void sgd_step(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, T lr, T momentum, T weight_decay);

struct EpochLog {
    int epoch = 0;
    double seg_loss = 0;
    double reg_loss = 0;
    double total_loss = 0;
    double train_dice = 0;
    int steps = 0;

    static constexpr const char* csv_header = "epoch,seg_loss,reg_loss,total_loss,train_dice";
    std::string csv_row() const;
};

struct NamedBlob {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    PAMUNetConfig model;
    std::uint64_t model_seed = 0;
    TrainConfig train;
    int epoch = 0;         // completed epochs
    int steps = 0;         // completed optimizer steps
    std::uint64_t rng_seed = 0;
    int rng_next_epoch = 0;
    std::vector<NamedBlob> params;
    std::vector<NamedBlob> velocity;

    /// "PAMCKPT\0", u32 version, u64 header length, JSON header, then little-endian f32 blobs.
    std::string serialize() const;
    static Checkpoint deserialize(std::string_view bytes);
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    /// Model with the stored parameters.
    PAMUNet<float> build_model() const;
};

/// Copies named values into the model; names and shapes must match exactly.
void load_parameters(const PAMUNet<float>& model, const std::vector<NamedBlob>& params);
std::vector<NamedBlob> snapshot_parameters(const PAMUNet<float>& model);

class Trainer {
   public:
    Trainer(PAMUNet<float>& model, TrainConfig config);
    /// Continues from a checkpoint: restores parameters, velocities and the epoch counter.
    Trainer(PAMUNet<float>& model, const Checkpoint& resume);

    /// One pass over `train` in the seeded permutation for the current epoch.
    EpochLog run_epoch(const std::vector<Sample>& train);
    /// Runs up to config().epochs epochs (or max_steps steps); `on_epoch` sees each log.
    std::vector<EpochLog> fit(const std::vector<Sample>& train,
                              const std::function<void(const EpochLog&)>& on_epoch = {});

    bool finished() const;
    int epoch() const { return epoch_; }
    int steps() const { return steps_; }
    const TrainConfig& config() const { return config_; }
    Checkpoint checkpoint() const;

    /// Sample order of epoch `e`; a pure function of (seed, e).
    static std::vector<std::size_t> permutation(std::uint64_t seed, int epoch, std::size_t count);

   private:
    void step(const TensorF& images, const TensorF& masks, EpochLog& log, int batch_index);

    PAMUNet<float>& model_;
    TrainConfig config_;
    ParameterList<float> params_;
    std::vector<std::vector<float>> velocity_;
    int epoch_ = 0;
    int steps_ = 0;
};

/// Names the first non-finite activation (execution order) or parameter for `images`.
std::string locate_non_finite(const PAMUNet<float>& model, const TensorF& images);

/// Thresholded predictions over `samples`, in batches.
MetricReport evaluate(const PAMUNet<float>& model, const std::vector<Sample>& samples, int batch_size = 8);

}  // namespace pamunet
