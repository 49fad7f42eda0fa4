#include "scan/explain.hpp"

#include <algorithm>

#include "scan/errors.hpp"
#include "scan/kernels.hpp"
#include "scan/masking.hpp"

namespace scan {

Tensor coarse_map(const Tensor& saliency, int64_t coarse_side) {
    const int64_t side = saliency.shape()[0];
    Tensor pooled = kernels::avg_pool_to(saliency, coarse_side);
    return kernels::bilinear_upsample(pooled, side);
}

std::string resolve_decoder_tap(const Decoder& decoder, const TargetModel& target) {
    const DecoderConfig& dc = decoder.config();
    std::string tap = dc.tap_layer;
    if (tap.empty()) {
        // legacy checkpoints: match by geometry
        for (const TapInfo& t : target.taps())
            if (t.channels == dc.input_channels && t.side == dc.feature_side) {
                tap = t.name;
                break;
            }
        if (tap.empty())
            throw ConfigError("no tap on this target matches the decoder geometry");
    }
    const TapInfo info = target.tap_info(tap);
    if (info.channels != dc.input_channels || info.side != dc.feature_side ||
        target.config().image_side != dc.image_side)
        throw ConfigError("decoder was trained for tap '" + tap +
                          "' with different geometry than this target provides");
    return tap;
}

namespace {

Explanation explain_masked(Decoder& decoder, const Tensor& feats, const Tensor& grads,
                           int64_t class_idx, double p) {
    masking::MaskedFeature masked = masking::gradient_mask(feats, grads, p);
    Tensor out = decoder.decode(masked);
    const int64_t s = decoder.config().image_side;
    Explanation e;
    e.target_class = class_idx;
    e.percentile_used = p;
    Tensor yc({s, s});
    std::copy(out.data() + 3 * s * s, out.data() + 4 * s * s, yc.data());
    e.saliency = core_math::confidence_activation(yc);
    e.reconstruction = Tensor({3, s, s});
    std::copy(out.data(), out.data() + 3 * s * s, e.reconstruction.data());
    e.coarse_saliency = coarse_map(e.saliency.values, decoder.config().feature_side);
    return e;
}

}  // namespace

Explanation explain(Decoder& decoder, TargetModel& target, const Tensor& image,
                    int64_t class_idx, double p) {
    auto sweep = percentile_sweep(decoder, target, image, class_idx, {p});
    return std::move(sweep.front());
}

std::vector<Explanation> percentile_sweep(Decoder& decoder, TargetModel& target,
                                          const Tensor& image, int64_t class_idx,
                                          const std::vector<double>& ps) {
    const std::string tap = resolve_decoder_tap(decoder, target);
    std::vector<Explanation> out;
    if (ps.empty()) return out;
    for (double p : ps)
        if (p < 0.0 || p > 100.0)
            throw ConfigError("percentile outside [0,100]");
    const int64_t s = target.config().image_side;
    Tensor raw = image.reshaped({1, 3, s, s});
    if (class_idx < 0) class_idx = predict_classes(target, raw)[0];
    auto [feats, grads] =
        target.feature_gradients(target.normalize(raw), tap, {class_idx});
    const TapInfo info = target.tap_info(tap);
    Tensor f = feats.reshaped({info.channels, info.side, info.side});
    Tensor g = grads.reshaped({info.channels, info.side, info.side});
    out.reserve(ps.size());
    for (double p : ps) out.push_back(explain_masked(decoder, f, g, class_idx, p));
    return out;
}

}  // namespace scan
