#include "pamunet/ablation.hpp"

#include <chrono>
#include <cstdio>
#include <stdexcept>

namespace pamunet {

const std::vector<AblationVariant>& ablation_variants() {
    static const std::vector<AblationVariant> variants{
        {"encoder_only", DecoderKind::vanilla, AttentionVariant::none},
        {"med", DecoderKind::mobile, AttentionVariant::none},
        {"med_self", DecoderKind::mobile, AttentionVariant::self},
        {"med_cross", DecoderKind::mobile, AttentionVariant::cross},
        {"med_additive", DecoderKind::mobile, AttentionVariant::additive},
        {"med_pla", DecoderKind::mobile, AttentionVariant::pla},
    };
    return variants;
}

AblationOptions default_ablation_options() {
    AblationOptions o;
    o.model.levels = 2;
    o.model.base_channels = 8;
    o.model.stem_stride = 2;
    o.train.lr = 0.05;
    o.train.epochs = 15;
    o.data.count = 64;
    o.data.size = 64;
    return o;
}

const AblationRow& AblationReport::mean_of(const std::string& variant) const {
    for (const AblationRow& r : means) {
        if (r.variant == variant) return r;
    }
    throw std::out_of_range("no ablation variant '" + variant + "'");
}

std::string AblationReport::to_csv() const {
    std::string out = "variant,seed,test_dice,test_miou,test_recall,macs\n";
    char buf[256];
    auto emit = [&](const AblationRow& r) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%llu\n", r.variant.c_str(), r.seed.c_str(), r.dice,
                      r.miou, r.recall, static_cast<unsigned long long>(r.macs));
        out += buf;
    };
    for (const AblationRow& r : rows) emit(r);
    for (const AblationRow& r : means) emit(r);
    return out;
}

AblationReport run_ablation(const AblationOptions& options, const std::function<void(const AblationRow&)>& on_row) {
    if (options.seeds < 1) throw ConfigError("seeds must be >= 1");
    std::vector<Sample> train, test;
    for (int i = 0; i < options.data.count; ++i) {
        Sample s = synth_sample(options.data, i);
        const Split split = synth_split(i, options.data.count);
        if (split == Split::train) train.push_back(std::move(s));
        else if (split == Split::test) test.push_back(std::move(s));
    }
    if (train.empty() || test.empty()) throw DataError("ablation needs nonempty train and test splits");

    AblationReport report;
    for (const AblationVariant& v : ablation_variants()) {
        PAMUNetConfig mc = options.model;
        mc.decoder_kind = v.decoder;
        mc.attention_variant = v.attention;
        mc.height = mc.width = options.data.size;
        mc.in_channels = options.data.channels;
        AblationRow mean{v.name, "mean"};
        for (int seed = 0; seed < options.seeds; ++seed) {
            const auto start = std::chrono::steady_clock::now();
            PAMUNet<float> model(mc, static_cast<std::uint64_t>(seed));
            TrainConfig tc = options.train;
            tc.seed = static_cast<std::uint64_t>(seed);
            Trainer trainer(model, tc);
            trainer.fit(train);
            const MetricReport m = evaluate(model, test, tc.batch_size);
            AblationRow row{v.name, std::to_string(seed), m.mean_dice, m.mean_miou, m.mean_recall,
                            model.count_flops({1, mc.in_channels, mc.height, mc.width}).total_macs()};
            row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            mean.dice += row.dice / options.seeds;
            mean.miou += row.miou / options.seeds;
            mean.recall += row.recall / options.seeds;
            mean.macs = row.macs;
            mean.seconds += row.seconds;
            if (on_row) on_row(row);
            report.rows.push_back(std::move(row));
        }
        report.means.push_back(mean);
    }
    return report;
}

}  // namespace pamunet
