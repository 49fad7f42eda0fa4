#include "scan/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "scan/errors.hpp"
#include "scan/hash.hpp"
#include "scan/masking.hpp"

namespace scan {

void TrainConfig::validate() const {
    if (alpha <= 0.0) throw ConfigError("alpha must be > 0");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (inference_percentile < 0.0 || inference_percentile > 100.0)
        throw ConfigError("inference percentile must lie in [0,100]");
    if (train_p_min < 0.0 || train_p_max > 100.0 || train_p_min > train_p_max)
        throw ConfigError("training percentile range invalid");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("learning rate must be > 0");
}

AblationVariant ablation_from_name(const std::string& s) {
    if (s == "alpha_one") return AblationVariant::alpha_one;
    if (s == "no_gradient_mask") return AblationVariant::no_gradient_mask;
    if (s == "no_blur") return AblationVariant::no_blur;
    if (s == "sigmoid_conf") return AblationVariant::sigmoid_conf;
    throw ConfigError("unknown ablation variant: " + s);
}

std::string ablation_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::alpha_one: return "alpha_one";
        case AblationVariant::no_gradient_mask: return "no_gradient_mask";
        case AblationVariant::no_blur: return "no_blur";
        case AblationVariant::sigmoid_conf: return "sigmoid_conf";
    }
    throw ConfigError("unknown ablation variant");
}

TrainConfig ablation_variant(TrainConfig cfg, AblationVariant v) {
    cfg.validate();
    switch (v) {
        case AblationVariant::alpha_one:
            cfg.alpha = 1.0;
            break;
        case AblationVariant::no_gradient_mask:
            cfg.train_p_min = 0.0;
            cfg.train_p_max = 0.0;
            cfg.inference_percentile = 0.0;
            break;
        case AblationVariant::no_blur:
            cfg.blur_targets = false;
            break;
        case AblationVariant::sigmoid_conf:
            cfg.conf_variant = core_math::ConfVariant::sigmoid;
            break;
    }
    return cfg;
}

std::vector<Tensor> recon_targets(const Dataset& data, int64_t feature_side,
                                  bool blur) {
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(data.size()));
    for (int64_t i = 0; i < data.size(); ++i) {
        Tensor img = data.image(i);
        if (blur) {
            out.push_back(core_math::blur_target(img, feature_side).image);
        } else {
            out.push_back(std::move(img));
        }
    }
    return out;
}

namespace {

Tensor sample_of(const Tensor& batch, int64_t i) {
    std::vector<int64_t> shape(batch.shape().begin() + 1, batch.shape().end());
    Tensor out(shape);
    const int64_t n = out.numel();
    std::copy(batch.data() + i * n, batch.data() + (i + 1) * n, out.data());
    return out;
}

// Per-sample gradient mask applied across the whole batch at one percentile.
Tensor mask_batch(const Tensor& feats, const Tensor& grads, double p) {
    Tensor out(feats.shape());
    const int64_t n = feats.shape()[0];
    const int64_t per = feats.numel() / n;
    for (int64_t i = 0; i < n; ++i) {
        Tensor f = sample_of(feats, i);
        Tensor g = sample_of(grads, i);
        masking::MaskedFeature m = masking::gradient_mask(f, g, p);
        std::copy(m.values.data(), m.values.data() + per, out.data() + i * per);
    }
    return out;
}

core_math::ReconTarget make_target(const Tensor& image, int64_t feature_side,
                                   bool blurred) {
    core_math::ReconTarget t;
    t.image = image;
    if (blurred) {
        core_math::blur_params(image.shape()[1], feature_side, t.kernel_size, t.sigma);
    } else {
        t.kernel_size = 1;
        t.sigma = 0.0;
    }
    return t;
}

}  // namespace

ValStats scan_validation(Decoder& decoder, TargetModel& target, const Dataset& val,
                         const TrainConfig& cfg, const std::string& tap,
                         const std::vector<Tensor>& targets) {
    const int64_t n = val.size();
    const int64_t side = val.image_side();
    const int64_t chunk = 32;
    ValStats stats;
    const auto pred = predict_classes(target, val.images);
    for (int64_t start = 0; start < n; start += chunk) {
        const int64_t bs = std::min(chunk, n - start);
        Tensor batch({bs, 3, side, side});
        std::copy(val.images.data() + start * 3 * side * side,
                  val.images.data() + (start + bs) * 3 * side * side, batch.data());
        std::vector<int64_t> classes(pred.begin() + start, pred.begin() + start + bs);
        auto [feats, grads] =
            target.feature_gradients(target.normalize(batch), tap, classes);
        Tensor masked = mask_batch(feats, grads, cfg.inference_percentile);
        Tensor out = decoder.forward(masked);
        for (int64_t i = 0; i < bs; ++i) {
            const core_math::ReconTarget rt =
                make_target(targets[static_cast<size_t>(start + i)],
                            decoder.config().feature_side, cfg.blur_targets);
            const core_math::LossTerms terms = core_math::total_loss(
                sample_of(out, i), rt, cfg.alpha, cfg.lambda, cfg.conf_variant);
            stats.c_mean += terms.c_mean;
            stats.total += terms.total;
        }
    }
    stats.c_mean /= static_cast<double>(n);
    stats.total /= static_cast<double>(n);
    return stats;
}

ScanTrainResult train_scan(TargetModel& target, const SplitDataset& data,
                           TrainConfig cfg, ScanTrainResult* salvage) {
    cfg.validate();
    if (!target.frozen()) throw ConfigError("target model must be frozen");
    if (data.train.image_side() != target.config().image_side)
        throw ConfigError("dataset image side does not match target");
    const std::string tap = cfg.tap_layer.empty() ? target.default_tap() : cfg.tap_layer;
    const TapInfo info = target.tap_info(tap);

    DecoderConfig dcfg;
    dcfg.variant = cfg.decoder_variant.value_or(target.config().arch == Arch::cnn
                                                    ? DecoderVariant::residual
                                                    : DecoderVariant::transformer);
    dcfg.tap_layer = tap;
    dcfg.input_channels = info.channels;
    dcfg.feature_side = info.side;
    dcfg.image_side = target.config().image_side;
    dcfg.n_attention_blocks = cfg.decoder_attention_blocks;
    dcfg.base_width = cfg.decoder_base_width;
    dcfg.width_floor = cfg.decoder_width_floor;

    Rng rng(cfg.seed);
    auto decoder = build_decoder(dcfg, rng);
    nn::Adam optim(decoder->params(), cfg.learning_rate);

    TrainLog log;
    log.target_hash_before = target.weights_sha256();

    const auto train_targets = recon_targets(data.train, info.side, cfg.blur_targets);
    const auto val_targets = recon_targets(data.val, info.side, cfg.blur_targets);

    const int64_t n = data.train.size();
    const int64_t side = data.train.image_side();
    const int64_t sk = target.config().image_side;
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (int64_t start = 0; start < n; start += cfg.batch_size) {
            const int64_t bs = std::min(cfg.batch_size, n - start);
            Tensor batch({bs, 3, side, side});
            std::vector<int64_t> labels(bs);
            for (int64_t i = 0; i < bs; ++i) {
                const int64_t src = order[start + i];
                std::copy(data.train.images.data() + src * 3 * side * side,
                          data.train.images.data() + (src + 1) * 3 * side * side,
                          batch.data() + i * 3 * side * side);
                labels[i] = data.train.labels[src];
            }
            auto [feats, grads] =
                target.feature_gradients(target.normalize(batch), tap, labels);
            const double p = cfg.train_p_min == cfg.train_p_max
                                 ? cfg.train_p_min
                                 : rng.uniform(cfg.train_p_min, cfg.train_p_max);
            Tensor masked = mask_batch(feats, grads, p);
            Tensor out = decoder->forward(masked);

            Tensor gout({bs, 4, sk, sk});
            StepRecord rec;
            rec.epoch = epoch;
            rec.step = start / cfg.batch_size;
            rec.percentile = p;
            for (int64_t i = 0; i < bs; ++i) {
                const core_math::ReconTarget rt =
                    make_target(train_targets[static_cast<size_t>(order[start + i])],
                                info.side, cfg.blur_targets);
                Tensor grad;
                const core_math::LossTerms terms =
                    core_math::total_loss_with_grad(sample_of(out, i), rt, cfg.alpha,
                                                    cfg.lambda, cfg.conf_variant, grad);
                rec.conf_loss += terms.conf_loss;
                rec.recon_loss += terms.recon_loss;
                rec.total += terms.total;
                rec.c_mean += terms.c_mean;
                const double inv = 1.0 / static_cast<double>(bs);
                double* gp = gout.data() + i * 4 * sk * sk;
                for (int64_t j = 0; j < 4 * sk * sk; ++j) gp[j] = grad[j] * inv;
            }
            rec.conf_loss /= static_cast<double>(bs);
            rec.recon_loss /= static_cast<double>(bs);
            rec.total /= static_cast<double>(bs);
            rec.c_mean /= static_cast<double>(bs);
            if (!std::isfinite(rec.total)) {
                std::ostringstream msg;
                msg << "loss became non-finite at epoch " << epoch << " step "
                    << rec.step << " (total=" << rec.total
                    << "); decoder holds the last-good parameters";
                if (salvage != nullptr) {
                    // No optimizer step was taken, so the net is pre-divergence.
                    salvage->decoder = std::move(decoder);
                    salvage->log = log;
                }
                throw TrainingError(msg.str());
            }
            optim.zero_grad();
            decoder->backward(gout, true);
            optim.step();
            log.steps.push_back(rec);
            if (cfg.verbose && rec.step % 8 == 0)
                std::fprintf(stderr,
                             "[scan] epoch %lld step %lld total %.5f c_mean %.4f "
                             "p %.1f\n",
                             static_cast<long long>(epoch),
                             static_cast<long long>(rec.step), rec.total, rec.c_mean,
                             p);
        }
        const ValStats vs =
            scan_validation(*decoder, target, data.val, cfg, tap, val_targets);
        log.epochs.push_back({epoch, vs.c_mean, vs.total});
        if (cfg.verbose)
            std::fprintf(stderr, "[scan] epoch %lld val c_mean %.4f val total %.5f\n",
                         static_cast<long long>(epoch), vs.c_mean, vs.total);
    }

    log.final_val_c_mean = log.epochs.back().val_c_mean;
    log.final_val_total = log.epochs.back().val_total;
    log.target_hash_after = target.weights_sha256();
    if (log.target_hash_before != log.target_hash_after)
        throw TrainingError("target weights changed during decoder training");
    ScanTrainResult out;
    out.decoder = std::move(decoder);
    out.log = log;
    return out;
}

}  // namespace scan
