#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pamunet/model.hpp"
#include "pamunet/trainer.hpp"

namespace pamunet {

/// One row of the ablation grid: a decoder kind paired with an attention variant.
struct AblationVariant {
    std::string name;
    DecoderKind decoder = DecoderKind::mobile;
    AttentionVariant attention = AttentionVariant::none;
};

/// encoder_only, med, med_self, med_cross, med_additive, med_pla.
const std::vector<AblationVariant>& ablation_variants();

struct AblationOptions {
    /// Architecture shared by every variant; decoder kind and attention variant are overridden.
    PAMUNetConfig model;
    TrainConfig train;
    SynthOptions data;
    /// Model and shuffle seeds are 0 .. seeds - 1, shared across variants.
    int seeds = 3;
};

struct AblationRow {
    std::string variant;
    std::string seed;  // a number, or "mean"
    double dice = 0, miou = 0, recall = 0;
    std::uint64_t macs = 0;
    double seconds = 0;
};

struct AblationReport {
    std::vector<AblationRow> rows;   // variant x seed, variant order
    std::vector<AblationRow> means;  // one per variant

    const AblationRow& mean_of(const std::string& variant) const;
    /// `variant,seed,test_dice,test_miou,test_recall,macs` rows, then the mean rows.
    std::string to_csv() const;
};

/// The grid used by `pamunet ablate` unless overridden.
AblationOptions default_ablation_options();

/// Trains every variant for every seed on the synthetic train split and scores the test split.
AblationReport run_ablation(const AblationOptions& options, const std::function<void(const AblationRow&)>& on_row = {});

}  // namespace pamunet
