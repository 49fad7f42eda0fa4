#pragma once

#include <memory>
#include <vector>

#include "scan/masking.hpp"
#include "scan/nn.hpp"
#include "scan/rng.hpp"
#include "scan/tensor.hpp"

namespace scan {

enum class DecoderVariant { residual, transformer };

std::string decoder_variant_name(DecoderVariant v);
DecoderVariant decoder_variant_from_name(const std::string& s);

struct DecoderConfig {
    DecoderVariant variant = DecoderVariant::residual;
    std::string tap_layer;  // tap this decoder was trained against
    int64_t input_channels = 0;
    int64_t feature_side = 0;
    int64_t image_side = 0;
    int64_t n_attention_blocks = 4;
    int64_t n_attention_heads = 4;
    int64_t base_width = 32;
    // Halving schedule floor. 16 keeps the desk-scale nets within a
    // single-core training budget; raise for wider decoders.
    int64_t width_floor = 16;

    int64_t n_stages() const;  // log2(image_side / feature_side)
};

/// Upsampling decoder from masked features to a 4-channel image-resolution
/// output: channels 0..2 raw reconstruction, channel 3 confidence
/// pre-activation. Residual variant: entry conv, then per stage 2 residual
/// blocks + stride-2 transposed conv. Transformer variant prepends
/// self-attention blocks with learned positional embeddings over the
/// feature-grid tokens.
class Decoder {
public:
    Decoder(const DecoderConfig& cfg, Rng& rng);
    ~Decoder();
    Decoder(const Decoder&) = delete;
    Decoder& operator=(const Decoder&) = delete;

    const DecoderConfig& config() const { return cfg_; }

    Tensor forward(const Tensor& x);  // [N,C,f,f] -> [N,4,s,s]
    Tensor backward(const Tensor& gy, bool want_param_grads = true);

    Tensor decode(const masking::MaskedFeature& x);  // [C,f,f] -> [4,s,s]

    std::vector<nn::Param*> params();
    int64_t param_count();

private:
    struct Stage;
    DecoderConfig cfg_;

    std::unique_ptr<nn::Param> pos_embed_;  // transformer variant, [f*f, C]
    std::vector<std::unique_ptr<nn::TransformerBlock>> attn_blocks_;

    std::unique_ptr<nn::Conv2d> entry_;
    std::unique_ptr<nn::GroupNorm> entry_gn_;
    nn::ReLU entry_act_;
    std::vector<std::unique_ptr<Stage>> stages_;
    std::unique_ptr<nn::Conv2d> proj_;  // 1x1 to the 3 reconstruction channels
    // The confidence head branches off at feature resolution, where the
    // presence or absence of surviving evidence is still directly visible,
    // and is upsampled to pixel resolution. Reading confidence off the
    // shared full-resolution color features instead lets it collapse onto
    // brightness statistics.
    std::unique_ptr<nn::Conv2d> conf_c1_;
    nn::ReLU conf_act_;
    std::unique_ptr<nn::Conv2d> conf_c2_;
    // Per-position output bias. Transposed-conv borders see fewer taps than
    // the interior, so without this the border logits sit near the conv bias
    // regardless of input; a free per-pixel offset lets them calibrate.
    std::unique_ptr<nn::Param> out_bias_;
};

// Validates geometry (power-of-two upsampling ratio) and builds the net.
std::unique_ptr<Decoder> build_decoder(const DecoderConfig& cfg, Rng& rng);

}  // namespace scan
