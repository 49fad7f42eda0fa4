#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "scan/dataset.hpp"
#include "scan/nn.hpp"
#include "scan/rng.hpp"
#include "scan/tensor.hpp"

namespace scan {

enum class Arch { cnn, vit };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& s);

struct TargetConfig {
    Arch arch = Arch::cnn;
    int64_t image_side = 32;
    int64_t num_classes = 2;
    int64_t cnn_width = 16;  // stem width; stages use 2x/4x/4x
    int64_t vit_dim = 128;
    int64_t vit_heads = 4;
    int64_t vit_depth = 6;
    int64_t vit_patch = 4;
    int64_t vit_mlp_ratio = 2;
};

struct FeatureMap {
    Tensor values;  // [C, s_f, s_f]
    std::string layer_id;
    int64_t spatial_side = 0;
};

struct GradientMap {
    Tensor values;  // same shape as the paired FeatureMap
    int64_t target_class = -1;
};

struct TapInfo {
    std::string name;
    int64_t channels = 0;
    int64_t side = 0;
};

struct TapForward {
    Tensor logits;  // [num_classes]
    FeatureMap features;
};

namespace detail {
struct CnnStage;
}

/// Frozen-able classifier exposing intermediate features and per-class
/// feature gradients at named tap layers. CNN taps: conv_stem,
/// conv_stage_1..3 (final_conv aliases the last); ViT taps: attn_1..depth
/// (token grid without the class token, reshaped to [D, side, side]).
/// Gradient capture is stateful per call; do not interleave calls on a
/// shared instance.
class TargetModel {
public:
    TargetModel(const TargetConfig& cfg, Rng& rng);
    ~TargetModel();
    TargetModel(const TargetModel&) = delete;
    TargetModel& operator=(const TargetModel&) = delete;

    const TargetConfig& config() const { return cfg_; }
    bool frozen() const { return frozen_; }
    void set_frozen(bool f) { frozen_ = f; }
    uint64_t seed() const { return seed_; }
    void set_seed(uint64_t s) { seed_ = s; }

    std::string default_tap() const;
    std::vector<TapInfo> taps() const;
    TapInfo tap_info(const std::string& name) const;  // ConfigError if unknown

    // Channel statistics applied before the forward pass; identity for the
    // toy models so zero-fill perturbation matches raw-pixel zeroing.
    std::vector<double> norm_mean{0.0, 0.0, 0.0};
    std::vector<double> norm_std{1.0, 1.0, 1.0};
    Tensor normalize(const Tensor& images) const;

    // Batched core. images [N,3,s,s] (already normalized), logits [N,K].
    Tensor forward(const Tensor& images);
    // (logits, features[N,C,f,f]) captured at tap; logits unaffected.
    std::pair<Tensor, Tensor> forward_features(const Tensor& images,
                                               const std::string& tap);
    // (features, d logit[class_i] / d features), both [N,C,f,f].
    std::pair<Tensor, Tensor> feature_gradients(const Tensor& images,
                                                const std::string& tap,
                                                const std::vector<int64_t>& classes);
    // Resume the tail of the network from injected features; relies on the
    // cached upstream state of the most recent forward pass (ViT class token).
    Tensor forward_from_tap(const std::string& tap, const Tensor& features);
    // Full backward pass accumulating parameter gradients; returns d/d input.
    Tensor backward_params(const Tensor& glogits);

    // Single-image surface.
    TapForward forward_with_tap(const Tensor& image, const std::string& tap);
    std::pair<FeatureMap, GradientMap> gradient_map(const Tensor& image,
                                                    const std::string& tap,
                                                    int64_t target_class);

    std::vector<nn::Param*> params();
    std::string weights_sha256();

private:
    Tensor forward_impl(const Tensor& images, int64_t tap_idx, Tensor* feat_out);
    Tensor backward_impl(const Tensor& glogits, int64_t stop_tap_idx,
                         bool want_param_grads);
    int64_t tap_index(const std::string& name) const;
    Tensor tokens_to_grid(const Tensor& tokens) const;  // [N,T,D] -> [N,D,g,g]
    Tensor extract_patches(const Tensor& images) const;

    TargetConfig cfg_;
    bool frozen_ = false;
    uint64_t seed_ = 0;

    // cnn; the flatten+mlp head keeps class gradients at the tap spatially
    // varying per image, which the gradient mask depends on
    std::vector<std::unique_ptr<detail::CnnStage>> stages_;
    std::unique_ptr<nn::Linear> cnn_fc_;
    nn::ReLU cnn_act_;
    std::unique_ptr<nn::Linear> cnn_head_;

    // vit
    std::unique_ptr<nn::Linear> patch_embed_;
    std::unique_ptr<nn::Param> cls_token_;  // [D]
    std::unique_ptr<nn::Param> pos_embed_;  // [T0+1, D]
    std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
    std::unique_ptr<nn::LayerNorm> final_ln_;
    std::unique_ptr<nn::Linear> vit_head_;
    std::vector<Tensor> cached_tokens_;  // per-block outputs of the last forward
    int64_t cached_batch_ = 0;
};

struct TargetTrainOptions {
    int64_t epochs = 3;
    int64_t batch_size = 32;
    double lr = 1e-3;
    uint64_t seed = 1;
    bool verbose = false;
};

struct TargetTrainResult {
    std::unique_ptr<TargetModel> model;
    double val_accuracy = 0.0;
};

// Trains a fresh classifier and freezes it. TrainingError on divergence.
TargetTrainResult train_toy_targets(const SplitDataset& data, TargetConfig cfg,
                                    const TargetTrainOptions& opt);

std::vector<int64_t> predict_classes(TargetModel& model, const Tensor& images,
                                     int64_t batch_size = 64);
double top1_accuracy(TargetModel& model, const Dataset& data,
                     int64_t batch_size = 64);

}  // namespace scan
