#include "pamunet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pamunet/ablation.hpp"
#include "pamunet/autograd.hpp"
#include "pamunet/cka.hpp"
#include "pamunet/data.hpp"
#include "pamunet/model.hpp"
#include "pamunet/ops.hpp"
#include "pamunet/trainer.hpp"

namespace pamunet {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path.string());
    try {
        json j = json::parse(in);
        if (!j.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (key != "model" && key != "train") {
                throw ConfigError(path.string() + ": unknown config section '" + key + "'");
            }
        }
        return j;
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << text;
    if (!f) throw DataError("failed writing " + path);
}

/// Model options shared by train, flops and ablate: preset, then config file, then flags.
struct ModelFlags {
    std::string preset = "default";
    std::string variant;
    std::string decoder;

    void attach(CLI::App* app, const std::string& preset_default) {
        preset = preset_default;
        app->add_option("--preset", preset, "Architecture preset: default, tiny or gradcheck")
            ->check(CLI::IsMember({"default", "tiny", "gradcheck"}))
            ->capture_default_str();
        app->add_option("--variant", variant, "Attention variant: none, self, cross, additive or pla")
            ->check(CLI::IsMember({"none", "self", "cross", "additive", "pla"}));
        app->add_option("--decoder", decoder, "Decoder kind: mobile or vanilla")
            ->check(CLI::IsMember({"mobile", "vanilla"}));
    }

    PAMUNetConfig resolve(const json* file) const {
        PAMUNetConfig c = preset == "tiny"        ? PAMUNetConfig::tiny()
                          : preset == "gradcheck" ? PAMUNetConfig::gradcheck()
                                                  : PAMUNetConfig{};
        if (file && file->contains("model")) c = PAMUNetConfig::from_json(file->at("model"), c);
        if (!variant.empty()) c.attention_variant = parse_variant(variant);
        if (!decoder.empty()) c.decoder_kind = parse_decoder(decoder);
        return c;
    }
};

/// TrainConfig flags; only flags given on the command line override the config file.
struct TrainFlags {
    TrainConfig values;
    std::vector<std::pair<CLI::Option*, std::function<void(TrainConfig&)>>> bound;

    void attach(CLI::App* app, const TrainConfig& defaults) {
        values = defaults;
        bind(app->add_option("--lr", values.lr, "Learning rate"), &TrainConfig::lr);
        bind(app->add_option("--momentum", values.momentum, "SGD momentum"), &TrainConfig::momentum);
        bind(app->add_option("--weight-decay", values.weight_decay, "Coupled L2 weight decay"),
             &TrainConfig::weight_decay);
        bind(app->add_option("--batch-size", values.batch_size, "Samples per step"), &TrainConfig::batch_size);
        bind(app->add_option("--epochs", values.epochs, "Passes over the train split"), &TrainConfig::epochs);
        bind(app->add_option("--seed", values.seed, "Model initialization and shuffling seed"), &TrainConfig::seed);
        bind(app->add_option("--lambda-reg", values.lambda_reg, "Attention regularization weight"),
             &TrainConfig::lambda_reg);
        bind(app->add_option("--augment", values.augment, "Random flips and quarter turns (true/false)"),
             &TrainConfig::augment);
        bind(app->add_option("--max-steps", values.max_steps, "Stop after this many steps; 0 means no limit"),
             &TrainConfig::max_steps);
    }

    template <typename M>
    void bind(CLI::Option* opt, M TrainConfig::*member) {
        opt->capture_default_str();
        bound.emplace_back(opt, [this, member](TrainConfig& c) { c.*member = values.*member; });
    }

    TrainConfig resolve(const json* file, TrainConfig base) const {
        if (file && file->contains("train")) base = TrainConfig::from_json(file->at("train"), base);
        for (const auto& [opt, apply] : bound) {
            if (opt->count() > 0) apply(base);
        }
        base.validate();
        return base;
    }
};

/// Adapts the model input to the data and reports the change.
void fit_input(PAMUNetConfig& c, const Sample& s, std::ostream& err) {
    const int ch = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
    if (c.in_channels != ch || c.height != h || c.width != w) {
        err << "note: model input set to " << ch << "x" << h << "x" << w << " to match the data\n";
        c.in_channels = ch;
        c.height = h;
        c.width = w;
    }
}

TensorF stack_images(const std::vector<Sample>& samples) {
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    TensorF images, masks;
    make_batch(samples, idx, images, masks);
    return images;
}

/// Each row scaled by its maximum to 0..255.
Raster heatmap(const TensorF& maps, int sample) {
    const int rows = maps.dim(1), cols = maps.dim(2);
    Raster r{1, rows, cols, std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols)};
    const auto data = maps.data();
    const std::size_t base = static_cast<std::size_t>(sample) * rows * cols;
    for (int i = 0; i < rows; ++i) {
        const auto row = data.begin() + static_cast<std::ptrdiff_t>(base + static_cast<std::size_t>(i) * cols);
        const float peak = *std::max_element(row, row + cols);
        for (int j = 0; j < cols; ++j) {
            const double v = peak > 0 ? static_cast<double>(row[j]) / peak : 0.0;
            r.pixels[static_cast<std::size_t>(i) * cols + j] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
    return r;
}

struct Cli {
    std::ostream& out;
    std::ostream& err;

    CLI::App app{"PAM-UNet: mobile U-Net with progressive Luong attention gates"};
    std::function<void()> action;

    // shared
    std::string config_path;
    bool deterministic = true;

    // synth
    SynthOptions synth;
    std::string synth_out;

    // train
    ModelFlags train_model;
    TrainFlags train_flags;
    std::string manifest_path, checkpoint_out = "model.pamckpt", log_path, resume_path;

    // eval / predict / cka
    std::string checkpoint_path, split = "test", eval_out;
    int eval_batch = 8;
    std::vector<std::string> image_paths;
    std::string predict_out = "predictions";
    bool heatmaps = false;
    std::string cka_a, cka_b, cka_out;
    std::optional<std::uint64_t> cka_untrained_seed;
    int cka_samples = 32;
    std::vector<std::string> cka_layers;

    // flops
    ModelFlags flops_model;
    int flops_batch = 1;
    std::string flops_out;

    // ablate
    AblationOptions ablation = default_ablation_options();
    ModelFlags ablate_model;
    TrainFlags ablate_flags;
    std::string ablate_out;

    Cli(std::ostream& o, std::ostream& e) : out(o), err(e) {
        app.require_subcommand(1);
        app.add_flag("--deterministic,!--no-deterministic", deterministic,
                     "Reduction-order-deterministic execution (always single-threaded; kept for scripts)")
            ->capture_default_str();
        add_synth();
        add_train();
        add_eval();
        add_predict();
        add_flops();
        add_cka();
        add_ablate();
    }

    void add_synth() {
        auto* c = app.add_subcommand("synth", "Generate a seeded synthetic segmentation dataset");
        c->add_option("--out", synth_out, "Output directory")->required();
        c->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
        c->add_option("--count", synth.count, "Number of samples")->capture_default_str();
        c->add_option("--size", synth.size, "Image side, a multiple of 16")->capture_default_str();
        c->add_option("--max-blobs", synth.max_blobs, "Maximum ellipses per image")->capture_default_str();
        c->add_option("--channels", synth.channels, "1 (P5) or 3 (P6)")->capture_default_str();
        c->callback([this] { action = [this] { run_synth(); }; });
    }

    void add_train() {
        auto* c = app.add_subcommand(
            "train", "Train on the manifest's train split; prints epoch,seg_loss,reg_loss,total_loss,train_dice");
        c->add_option("--manifest", manifest_path, "Dataset manifest (manifest.tsv)")->required();
        c->add_option("--config", config_path, "JSON file with optional \"model\" and \"train\" sections");
        train_model.attach(c, "default");
        train_flags.attach(c, TrainConfig{});
        c->add_option("--out", checkpoint_out, "Checkpoint written after training")->capture_default_str();
        c->add_option("--log", log_path, "Also write the epoch CSV here");
        c->add_option("--resume", resume_path, "Continue from a checkpoint; --epochs and --max-steps extend it");
        c->callback([this] { action = [this] { run_train(); }; });
    }

    void add_eval() {
        auto* c = app.add_subcommand("eval", "Score a checkpoint; prints id,dice,miou,recall rows and a mean row");
        c->add_option("--checkpoint", checkpoint_path, "Trained checkpoint")->required();
        c->add_option("--manifest", manifest_path, "Dataset manifest")->required();
        c->add_option("--split", split, "train, val or test")
            ->check(CLI::IsMember({"train", "val", "test"}))
            ->capture_default_str();
        c->add_option("--batch-size", eval_batch, "Samples per forward pass")->capture_default_str();
        c->add_option("--out", eval_out, "CSV path; stdout when omitted");
        c->callback([this] { action = [this] { run_eval(); }; });
    }

    void add_predict() {
        auto* c = app.add_subcommand("predict", "Write predicted masks and optional attention heatmaps as PGM");
        c->add_option("--checkpoint", checkpoint_path, "Trained checkpoint")->required();
        auto* m = c->add_option("--manifest", manifest_path, "Dataset manifest");
        c->add_option("--split", split, "Split to predict when using --manifest")
            ->check(CLI::IsMember({"train", "val", "test"}))
            ->capture_default_str();
        auto* i = c->add_option("--image", image_paths, "Image file(s) to predict instead of a manifest");
        m->excludes(i);
        c->add_option("--out", predict_out, "Output directory")->capture_default_str();
        c->add_flag("--heatmaps", heatmaps, "Also write each gate's attention map, rows scaled to 0..255");
        c->callback([this, m, i] {
            if (m->count() == 0 && i->count() == 0) throw CLI::ValidationError("predict", "needs --manifest or --image");
            action = [this] { run_predict(); };
        });
    }

    void add_flops() {
        auto* c = app.add_subcommand("flops", "Per-layer MAC table: layer,kind,macs,flops plus a total row");
        c->add_option("--config", config_path, "JSON file with an optional \"model\" section");
        flops_model.attach(c, "default");
        c->add_option("--batch", flops_batch, "Batch size counted")->capture_default_str();
        c->add_option("--out", flops_out, "CSV path; stdout when omitted");
        c->callback([this] { action = [this] { run_flops(); }; });
    }

    void add_cka() {
        auto* c = app.add_subcommand(
            "cka", "Linear CKA between the contract layers of two models: rows are model A, columns model B");
        c->add_option("--a", cka_a, "Checkpoint of model A")->required();
        auto* b = c->add_option("--b", cka_b, "Checkpoint of model B");
        auto* u = c->add_option("--b-untrained-seed", cka_untrained_seed,
                                "Use a freshly initialized copy of model A's architecture as model B");
        b->excludes(u);
        c->add_option("--manifest", manifest_path, "Dataset manifest supplying the probe images")->required();
        c->add_option("--split", split, "Probe split")
            ->check(CLI::IsMember({"train", "val", "test"}))
            ->capture_default_str();
        c->add_option("--samples", cka_samples, "Probe size, at least 4")->capture_default_str();
        c->add_option("--layers", cka_layers, "Restrict to these layer names")->delimiter(',');
        c->add_option("--out", cka_out, "CSV path; stdout when omitted");
        c->callback([this, b, u] {
            if (b->count() == 0 && u->count() == 0) throw CLI::ValidationError("cka", "needs --b or --b-untrained-seed");
            action = [this] { run_cka(); };
        });
    }

    void add_ablate() {
        auto* c = app.add_subcommand(
            "ablate",
            "Train encoder_only, med, med_self, med_cross, med_additive and med_pla on shared seeds; prints "
            "variant,seed,test_dice,test_miou,test_recall,macs rows followed by mean rows");
        c->add_option("--seeds", ablation.seeds, "Seeds 0 .. n-1 per variant")->capture_default_str();
        c->add_option("--count", ablation.data.count, "Synthetic samples")->capture_default_str();
        c->add_option("--size", ablation.data.size, "Synthetic image side")->capture_default_str();
        c->add_option("--data-seed", ablation.data.seed, "Synthetic data seed")->capture_default_str();
        c->add_option("--max-blobs", ablation.data.max_blobs, "Maximum ellipses per image")->capture_default_str();
        c->add_option("--config", config_path, "JSON file with optional \"model\" and \"train\" sections");
        ablate_model.attach(c, "default");
        ablate_flags.attach(c, ablation.train);
        c->add_option("--out", ablate_out, "CSV path; stdout when omitted");
        c->callback([this, c] {
            action = [this, c] { run_ablate(c->get_option("--preset")->count() > 0); };
        });
    }

    std::optional<json> config_file() const {
        if (config_path.empty()) return std::nullopt;
        return read_json_file(config_path);
    }

    // ------------------------------------------------------------ commands

    void run_synth() {
        const Manifest m = synth_generate(synth_out, synth);
        out << "wrote " << m.entries.size() << " samples (" << m.split(Split::train).size() << " train, "
            << m.split(Split::val).size() << " val, " << m.split(Split::test).size() << " test) to "
            << (fs::path(synth_out) / "manifest.tsv").string() << "\n";
    }

    void run_train() {
        const Manifest manifest = Manifest::load(manifest_path);
        const std::vector<Sample> train = manifest.load_split(Split::train);
        if (train.empty()) throw DataError("manifest has no train samples");

        std::unique_ptr<PAMUNet<float>> model;
        std::unique_ptr<Trainer> trainer;
        if (!resume_path.empty()) {
            Checkpoint ck = Checkpoint::load(resume_path);
            for (const auto& [opt, apply] : train_flags.bound) {
                const std::string name = opt->get_name();
                if (opt->count() > 0 && name != "--epochs" && name != "--max-steps") {
                    throw UsageError("--resume keeps the stored training config; only --epochs and --max-steps "
                                     "may change");
                }
            }
            ck.train = train_flags.resolve(nullptr, ck.train);
            model = std::make_unique<PAMUNet<float>>(ck.build_model());
            trainer = std::make_unique<Trainer>(*model, ck);
        } else {
            const auto file = config_file();
            PAMUNetConfig mc = train_model.resolve(file ? &*file : nullptr);
            fit_input(mc, train.front(), err);
            const TrainConfig tc = train_flags.resolve(file ? &*file : nullptr, TrainConfig{});
            model = std::make_unique<PAMUNet<float>>(mc, tc.seed);
            trainer = std::make_unique<Trainer>(*model, tc);
        }

        std::ofstream log;
        if (!log_path.empty()) {
            log.open(log_path, std::ios::binary);
            if (!log) throw DataError("cannot write " + log_path);
            log << EpochLog::csv_header << "\n";
        }
        out << EpochLog::csv_header << "\n";
        trainer->fit(train, [&](const EpochLog& e) {
            out << e.csv_row() << "\n" << std::flush;
            if (log) log << e.csv_row() << "\n" << std::flush;
        });
        trainer->checkpoint().save(checkpoint_out);
        err << "saved " << checkpoint_out << " after " << trainer->steps() << " steps\n";
    }

    void run_eval() {
        const PAMUNet<float> model = Checkpoint::load(checkpoint_path).build_model();
        const Manifest manifest = Manifest::load(manifest_path);
        const MetricReport report = evaluate(model, manifest.load_split(parse_split(split)), eval_batch);
        write_text(eval_out, report.to_csv(), out);
    }

    void run_predict() {
        const PAMUNet<float> model = Checkpoint::load(checkpoint_path).build_model();
        std::vector<Sample> samples;
        if (!manifest_path.empty()) {
            samples = Manifest::load(manifest_path).load_split(parse_split(split));
        } else {
            for (const std::string& p : image_paths) {
                TensorF img = read_image(p);
                TensorF blank = TensorF::zeros({1, img.dim(1), img.dim(2)});
                samples.push_back({fs::path(p).stem().string(), std::move(img), std::move(blank)});
            }
        }
        if (samples.empty()) throw DataError("nothing to predict");
        fs::create_directories(predict_out);
        for (const Sample& s : samples) {
            const TensorF x = stack_images({s});
            const ForwardResult<float> fr = [&] {
                NoGradGuard<float> guard;
                return model.forward(x);
            }();
            const TensorF mask = threshold_logits(fr.logits, model.config().threshold);
            write_mask(fs::path(predict_out) / (s.id + "_mask.pgm"), ops::reshape(mask, {1, mask.dim(2), mask.dim(3)}));
            if (heatmaps) {
                for (std::size_t g = 0; g < fr.gate_maps.size(); ++g) {
                    write_netpbm(fs::path(predict_out) / (s.id + "_gate" + std::to_string(g) + ".pgm"),
                                 heatmap(fr.gate_maps[g], 0));
                }
            }
        }
        out << "wrote " << samples.size() << " predictions to " << predict_out << "\n";
    }

    void run_flops() {
        const auto file = config_file();
        const PAMUNetConfig mc = flops_model.resolve(file ? &*file : nullptr);
        const PAMUNet<float> model(mc, 0);
        write_text(flops_out, model.count_flops({flops_batch, mc.in_channels, mc.height, mc.width}).to_csv(), out);
    }

    void run_cka() {
        const Checkpoint a_ck = Checkpoint::load(cka_a);
        const PAMUNet<float> a = a_ck.build_model();
        const PAMUNet<float> b =
            cka_untrained_seed ? PAMUNet<float>(a_ck.model, *cka_untrained_seed) : Checkpoint::load(cka_b).build_model();
        std::vector<Sample> probe = Manifest::load(manifest_path).load_split(parse_split(split));
        if (static_cast<int>(probe.size()) > cka_samples) probe.resize(static_cast<std::size_t>(cka_samples));
        if (probe.size() < 4) throw DataError("cka needs at least 4 probe samples");
        const TensorF x = stack_images(probe);
        const CKAMatrix m = cka_matrix(capture(a, x, "A", cka_layers), capture(b, x, "B", cka_layers));
        write_text(cka_out, m.to_csv(), out);
    }

    void run_ablate(bool preset_given) {
        const auto file = config_file();
        const bool model_overridden = preset_given || (file && file->contains("model"));
        if (model_overridden) ablation.model = ablate_model.resolve(file ? &*file : nullptr);
        ablation.train = ablate_flags.resolve(file ? &*file : nullptr, ablation.train);
        const AblationReport report = run_ablation(ablation, [&](const AblationRow& r) {
            err << r.variant << " seed " << r.seed << ": test dice " << r.dice << " (" << r.seconds << " s)\n";
        });
        write_text(ablate_out, report.to_csv(), out);
    }
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    Cli cli(out, err);
    try {
        cli.app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = cli.app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    try {
        cli.action();
        return kExitOk;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const ShapeError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }
}

}  // namespace pamunet
