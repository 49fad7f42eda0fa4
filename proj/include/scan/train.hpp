#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scan/core_math.hpp"
#include "scan/dataset.hpp"
#include "scan/decoder.hpp"
#include "scan/models.hpp"

namespace scan {

struct TrainConfig {
    double alpha = 4.0;
    double lambda = 0.1;
    double inference_percentile = 95.0;
    int64_t epochs = 5;
    int64_t batch_size = 32;
    double learning_rate = 1e-3;
    uint64_t seed = 1;
    std::string tap_layer;  // empty = target model's default tap

    core_math::ConfVariant conf_variant = core_math::ConfVariant::sine;
    double train_p_min = 70.0;
    double train_p_max = 100.0;
    bool blur_targets = true;

    std::optional<DecoderVariant> decoder_variant;  // default: residual for cnn,
                                                    // transformer for vit
    int64_t decoder_base_width = 32;
    int64_t decoder_width_floor = 16;
    int64_t decoder_attention_blocks = 4;
    bool verbose = false;

    void validate() const;  // ConfigError on out-of-range fields
};

enum class AblationVariant { alpha_one, no_gradient_mask, no_blur, sigmoid_conf };

AblationVariant ablation_from_name(const std::string& s);
std::string ablation_name(AblationVariant v);

// Returns cfg with exactly one component toggled.
TrainConfig ablation_variant(TrainConfig cfg, AblationVariant v);

struct StepRecord {
    int64_t epoch = 0;
    int64_t step = 0;
    double conf_loss = 0.0;
    double recon_loss = 0.0;
    double total = 0.0;
    double c_mean = 0.0;
    double percentile = 0.0;
};

struct EpochRecord {
    int64_t epoch = 0;
    double val_c_mean = 0.0;
    double val_total = 0.0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::string target_hash_before;
    std::string target_hash_after;
    double final_val_c_mean = 0.0;
    double final_val_total = 0.0;
};

struct ScanTrainResult {
    std::unique_ptr<Decoder> decoder;
    TrainLog log;
};

// Blurred (or raw, when blur is ablated) reconstruction targets for a whole
// set, computed once up front.
std::vector<Tensor> recon_targets(const Dataset& data, int64_t feature_side,
                                  bool blur);

// Validation protocol: predicted class, inference percentile, mean confidence
// and mean total loss over the set.
struct ValStats {
    double c_mean = 0.0;
    double total = 0.0;
};
ValStats scan_validation(Decoder& decoder, TargetModel& target, const Dataset& val,
                         const TrainConfig& cfg, const std::string& tap,
                         const std::vector<Tensor>& targets);

// Trains a fresh decoder against the frozen target. The target's weights are
// hash-verified unchanged. TrainingError on NaN loss; when `salvage` is
// given it receives the last-good decoder and partial log before the throw.
ScanTrainResult train_scan(TargetModel& target, const SplitDataset& data,
                           TrainConfig cfg, ScanTrainResult* salvage = nullptr);

}  // namespace scan
