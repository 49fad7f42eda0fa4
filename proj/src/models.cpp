#include "scan/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scan/errors.hpp"
#include "scan/hash.hpp"

namespace scan {

namespace detail {

struct CnnStage {
    std::string name;
    nn::Conv2d conv;
    nn::GroupNorm gn;
    nn::ReLU act;
    int64_t out_channels;
    int64_t out_side;

    CnnStage(std::string n, int64_t in_ch, int64_t out_ch, int64_t stride,
             int64_t in_side, Rng& rng)
        : name(std::move(n)),
          conv(name, in_ch, out_ch, 3, stride, 1, rng),
          gn(name + ".gn", out_ch, nn::GroupNorm::default_groups(out_ch)),
          out_channels(out_ch),
          out_side(in_side / stride) {}

    Tensor forward(const Tensor& x) { return act.forward(gn.forward(conv.forward(x))); }
    Tensor backward(const Tensor& gy, bool wp) {
        return conv.backward(gn.backward(act.backward(gy, wp), wp), wp);
    }
};

}  // namespace detail

std::string arch_name(Arch a) { return a == Arch::cnn ? "cnn" : "vit"; }

Arch arch_from_name(const std::string& s) {
    if (s == "cnn") return Arch::cnn;
    if (s == "vit") return Arch::vit;
    throw ConfigError("unknown architecture: " + s);
}

TargetModel::TargetModel(const TargetConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.arch == Arch::cnn) {
        const int64_t w = cfg.cnn_width;
        const int64_t s = cfg.image_side;
        stages_.push_back(
            std::make_unique<detail::CnnStage>("conv_stem", 3, w, 2, s, rng));
        stages_.push_back(
            std::make_unique<detail::CnnStage>("conv_stage_1", w, 2 * w, 2, s / 2, rng));
        stages_.push_back(std::make_unique<detail::CnnStage>("conv_stage_2", 2 * w,
                                                             4 * w, 2, s / 4, rng));
        stages_.push_back(std::make_unique<detail::CnnStage>("conv_stage_3", 4 * w,
                                                             4 * w, 1, s / 8, rng));
        const int64_t flat = 4 * w * (s / 8) * (s / 8);
        cnn_fc_ = std::make_unique<nn::Linear>("head_fc", flat, 4 * w, rng);
        cnn_head_ = std::make_unique<nn::Linear>("head", 4 * w, cfg.num_classes, rng);
    } else {
        if (cfg.image_side % cfg.vit_patch != 0)
            throw ConfigError("image side not divisible by patch size");
        const int64_t grid = cfg.image_side / cfg.vit_patch;
        const int64_t t0 = grid * grid;
        const int64_t d = cfg.vit_dim;
        patch_embed_ = std::make_unique<nn::Linear>(
            "patch_embed", 3 * cfg.vit_patch * cfg.vit_patch, d, rng);
        cls_token_ = std::make_unique<nn::Param>("cls_token", Tensor({d}));
        pos_embed_ = std::make_unique<nn::Param>("pos_embed", Tensor({t0 + 1, d}));
        for (int64_t i = 0; i < d; ++i) cls_token_->value[i] = rng.normal() * 0.02;
        for (int64_t i = 0; i < pos_embed_->value.numel(); ++i)
            pos_embed_->value[i] = rng.normal() * 0.02;
        for (int64_t k = 0; k < cfg.vit_depth; ++k)
            blocks_.push_back(std::make_unique<nn::TransformerBlock>(
                "block_" + std::to_string(k + 1), d, cfg.vit_heads, cfg.vit_mlp_ratio,
                rng));
        final_ln_ = std::make_unique<nn::LayerNorm>("final_ln", d);
        vit_head_ = std::make_unique<nn::Linear>("head", d, cfg.num_classes, rng);
    }
}

TargetModel::~TargetModel() = default;

std::string TargetModel::default_tap() const {
    if (cfg_.arch == Arch::cnn) return "final_conv";
    return "attn_" + std::to_string((cfg_.vit_depth + 1) / 2);
}

std::vector<TapInfo> TargetModel::taps() const {
    std::vector<TapInfo> out;
    if (cfg_.arch == Arch::cnn) {
        for (const auto& st : stages_)
            out.push_back({st->name, st->out_channels, st->out_side});
    } else {
        const int64_t grid = cfg_.image_side / cfg_.vit_patch;
        for (int64_t k = 1; k <= cfg_.vit_depth; ++k)
            out.push_back({"attn_" + std::to_string(k), cfg_.vit_dim, grid});
    }
    return out;
}

int64_t TargetModel::tap_index(const std::string& name) const {
    if (cfg_.arch == Arch::cnn) {
        if (name == "final_conv") return static_cast<int64_t>(stages_.size()) - 1;
        for (size_t i = 0; i < stages_.size(); ++i)
            if (stages_[i]->name == name) return static_cast<int64_t>(i);
    } else {
        for (int64_t k = 1; k <= cfg_.vit_depth; ++k)
            if (name == "attn_" + std::to_string(k)) return k - 1;
    }
    std::ostringstream msg;
    msg << "tap layer '" << name << "' does not resolve on this " << arch_name(cfg_.arch)
        << " (available:";
    for (const auto& t : taps()) msg << ' ' << t.name;
    if (cfg_.arch == Arch::cnn) msg << " final_conv";
    msg << ')';
    throw ConfigError(msg.str());
}

TapInfo TargetModel::tap_info(const std::string& name) const {
    const int64_t idx = tap_index(name);
    if (cfg_.arch == Arch::cnn) {
        const auto& st = *stages_[idx];
        return {name, st.out_channels, st.out_side};
    }
    return {name, cfg_.vit_dim, cfg_.image_side / cfg_.vit_patch};
}

Tensor TargetModel::normalize(const Tensor& images) const {
    Tensor out = images;
    const auto& s = images.shape();
    const int64_t n = s[0], hw = s[2] * s[3];
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < 3; ++c) {
            double* p = out.data() + (i * 3 + c) * hw;
            const double m = norm_mean[c], sd = norm_std[c];
            for (int64_t j = 0; j < hw; ++j) p[j] = (p[j] - m) / sd;
        }
    return out;
}

Tensor TargetModel::extract_patches(const Tensor& images) const {
    const int64_t n = images.shape()[0], s = images.shape()[2];
    const int64_t p = cfg_.vit_patch, grid = s / p;
    const int64_t t0 = grid * grid, pv = 3 * p * p;
    Tensor patches({n * t0, pv});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t py = 0; py < grid; ++py)
            for (int64_t px = 0; px < grid; ++px) {
                double* row = patches.data() + (i * t0 + py * grid + px) * pv;
                for (int64_t c = 0; c < 3; ++c)
                    for (int64_t dy = 0; dy < p; ++dy)
                        for (int64_t dx = 0; dx < p; ++dx)
                            row[(c * p + dy) * p + dx] =
                                images[((i * 3 + c) * s + py * p + dy) * s + px * p +
                                       dx];
            }
    return patches;
}

Tensor TargetModel::tokens_to_grid(const Tensor& tokens) const {
    const int64_t n = tokens.shape()[0], t = tokens.shape()[1], d = tokens.shape()[2];
    const int64_t grid = cfg_.image_side / cfg_.vit_patch;
    Tensor out({n, d, grid, grid});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t tok = 1; tok < t; ++tok) {
            const int64_t y = (tok - 1) / grid, x = (tok - 1) % grid;
            for (int64_t c = 0; c < d; ++c)
                out[((i * d + c) * grid + y) * grid + x] = tokens[(i * t + tok) * d + c];
        }
    return out;
}

Tensor TargetModel::forward_impl(const Tensor& images, int64_t tap_idx,
                                 Tensor* feat_out) {
    if (images.rank() != 4 || images.shape()[1] != 3 ||
        images.shape()[2] != cfg_.image_side || images.shape()[3] != cfg_.image_side)
        throw ConfigError("image batch shape " + images.shape_str() +
                          " does not match target geometry");
    if (cfg_.arch == Arch::cnn) {
        Tensor x = images;
        for (size_t i = 0; i < stages_.size(); ++i) {
            x = stages_[i]->forward(x);
            if (feat_out != nullptr && static_cast<int64_t>(i) == tap_idx) *feat_out = x;
        }
        const int64_t n = x.shape()[0];
        Tensor h = cnn_fc_->forward(x.reshaped({n, x.numel() / n}));
        return cnn_head_->forward(cnn_act_.forward(h));
    }
    const int64_t n = images.shape()[0];
    const int64_t grid = cfg_.image_side / cfg_.vit_patch;
    const int64_t t0 = grid * grid, t = t0 + 1, d = cfg_.vit_dim;
    Tensor tok = patch_embed_->forward(extract_patches(images));
    Tensor x({n, t, d});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t c = 0; c < d; ++c)
            x[(i * t) * d + c] = cls_token_->value[c] + pos_embed_->value[c];
        for (int64_t tk = 0; tk < t0; ++tk)
            for (int64_t c = 0; c < d; ++c)
                x[(i * t + 1 + tk) * d + c] =
                    tok[(i * t0 + tk) * d + c] + pos_embed_->value[(1 + tk) * d + c];
    }
    cached_tokens_.assign(static_cast<size_t>(cfg_.vit_depth), Tensor());
    cached_batch_ = n;
    for (size_t k = 0; k < blocks_.size(); ++k) {
        x = blocks_[k]->forward(x);
        cached_tokens_[k] = x;
        if (feat_out != nullptr && static_cast<int64_t>(k) == tap_idx)
            *feat_out = tokens_to_grid(x);
    }
    Tensor y = final_ln_->forward(x.reshaped({n * t, d}));
    Tensor cls_rows({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < d; ++c) cls_rows[i * d + c] = y[(i * t) * d + c];
    return vit_head_->forward(cls_rows);
}

Tensor TargetModel::forward(const Tensor& images) {
    return forward_impl(images, -1, nullptr);
}

std::pair<Tensor, Tensor> TargetModel::forward_features(const Tensor& images,
                                                        const std::string& tap) {
    const int64_t idx = tap_index(tap);
    Tensor feats;
    Tensor logits = forward_impl(images, idx, &feats);
    return {std::move(logits), std::move(feats)};
}

Tensor TargetModel::backward_impl(const Tensor& glogits, int64_t stop_tap_idx,
                                  bool wp) {
    if (cfg_.arch == Arch::cnn) {
        Tensor g = cnn_fc_->backward(cnn_act_.backward(cnn_head_->backward(glogits, wp), wp), wp);
        const int64_t n = g.shape()[0];
        const int64_t side = cfg_.image_side / 8;
        g = g.reshaped({n, 4 * cfg_.cnn_width, side, side});
        for (int64_t i = static_cast<int64_t>(stages_.size()) - 1; i >= 0; --i) {
            if (i == stop_tap_idx) return g;
            g = stages_[i]->backward(g, wp);
        }
        return g;
    }
    const int64_t n = glogits.shape()[0];
    const int64_t grid = cfg_.image_side / cfg_.vit_patch;
    const int64_t t = grid * grid + 1, d = cfg_.vit_dim;
    Tensor gcls = vit_head_->backward(glogits, wp);
    Tensor gy({n * t, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < d; ++c) gy[(i * t) * d + c] = gcls[i * d + c];
    Tensor g = final_ln_->backward(gy, wp).reshaped({n, t, d});
    for (int64_t k = static_cast<int64_t>(blocks_.size()) - 1; k >= 0; --k) {
        if (k == stop_tap_idx) return g;
        g = blocks_[k]->backward(g, wp);
    }
    // embedding gradients
    Tensor gtok({n * (t - 1), d});
    for (int64_t i = 0; i < n; ++i) {
        if (wp) {
            for (int64_t c = 0; c < d; ++c) cls_token_->grad[c] += g[(i * t) * d + c];
            for (int64_t tk = 0; tk < t; ++tk)
                for (int64_t c = 0; c < d; ++c)
                    pos_embed_->grad[tk * d + c] += g[(i * t + tk) * d + c];
        }
        for (int64_t tk = 1; tk < t; ++tk)
            for (int64_t c = 0; c < d; ++c)
                gtok[(i * (t - 1) + tk - 1) * d + c] = g[(i * t + tk) * d + c];
    }
    return patch_embed_->backward(gtok, wp);
}

std::pair<Tensor, Tensor> TargetModel::feature_gradients(
    const Tensor& images, const std::string& tap, const std::vector<int64_t>& classes) {
    const int64_t idx = tap_index(tap);
    Tensor feats;
    Tensor logits = forward_impl(images, idx, &feats);
    const int64_t n = logits.shape()[0], k = logits.shape()[1];
    if (static_cast<int64_t>(classes.size()) != n)
        throw ConfigError("class index count does not match batch size");
    Tensor glogits({n, k});
    for (int64_t i = 0; i < n; ++i) {
        if (classes[i] < 0 || classes[i] >= k)
            throw ConfigError("class index out of range");
        glogits[i * k + classes[i]] = 1.0;
    }
    Tensor g = backward_impl(glogits, idx, false);
    if (cfg_.arch == Arch::vit) g = tokens_to_grid(g);
    return {std::move(feats), std::move(g)};
}

Tensor TargetModel::forward_from_tap(const std::string& tap, const Tensor& features) {
    const int64_t idx = tap_index(tap);
    if (cfg_.arch == Arch::cnn) {
        Tensor x = features;
        for (size_t i = static_cast<size_t>(idx) + 1; i < stages_.size(); ++i)
            x = stages_[i]->forward(x);
        const int64_t n = x.shape()[0];
        Tensor h = cnn_fc_->forward(x.reshaped({n, x.numel() / n}));
        return cnn_head_->forward(cnn_act_.forward(h));
    }
    const int64_t n = features.shape()[0], d = cfg_.vit_dim;
    const int64_t grid = cfg_.image_side / cfg_.vit_patch;
    const int64_t t = grid * grid + 1;
    if (n != cached_batch_ || cached_tokens_[static_cast<size_t>(idx)].numel() == 0)
        throw ConfigError("forward_from_tap requires a preceding forward pass "
                          "with the same batch size");
    const Tensor& ref = cached_tokens_[static_cast<size_t>(idx)];
    Tensor x({n, t, d});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t c = 0; c < d; ++c) x[(i * t) * d + c] = ref[(i * t) * d + c];
        for (int64_t tk = 1; tk < t; ++tk) {
            const int64_t y = (tk - 1) / grid, xx = (tk - 1) % grid;
            for (int64_t c = 0; c < d; ++c)
                x[(i * t + tk) * d + c] =
                    features[((i * d + c) * grid + y) * grid + xx];
        }
    }
    for (size_t k = static_cast<size_t>(idx) + 1; k < blocks_.size(); ++k)
        x = blocks_[k]->forward(x);
    Tensor y = final_ln_->forward(x.reshaped({n * t, d}));
    Tensor cls_rows({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < d; ++c) cls_rows[i * d + c] = y[(i * t) * d + c];
    return vit_head_->forward(cls_rows);
}

Tensor TargetModel::backward_params(const Tensor& glogits) {
    return backward_impl(glogits, -1, true);
}

TapForward TargetModel::forward_with_tap(const Tensor& image, const std::string& tap) {
    Tensor batch = image.reshaped({1, 3, cfg_.image_side, cfg_.image_side});
    auto [logits, feats] = forward_features(batch, tap);
    const TapInfo info = tap_info(tap);
    TapForward out;
    out.logits = logits.reshaped({cfg_.num_classes});
    out.features.values = feats.reshaped({info.channels, info.side, info.side});
    out.features.layer_id = tap;
    out.features.spatial_side = info.side;
    return out;
}

std::pair<FeatureMap, GradientMap> TargetModel::gradient_map(const Tensor& image,
                                                             const std::string& tap,
                                                             int64_t target_class) {
    Tensor batch = image.reshaped({1, 3, cfg_.image_side, cfg_.image_side});
    auto [feats, grads] = feature_gradients(batch, tap, {target_class});
    const TapInfo info = tap_info(tap);
    FeatureMap f;
    f.values = feats.reshaped({info.channels, info.side, info.side});
    f.layer_id = tap;
    f.spatial_side = info.side;
    GradientMap g;
    g.values = grads.reshaped({info.channels, info.side, info.side});
    g.target_class = target_class;
    return {std::move(f), std::move(g)};
}

std::vector<nn::Param*> TargetModel::params() {
    std::vector<nn::Param*> out;
    if (cfg_.arch == Arch::cnn) {
        for (auto& st : stages_) {
            st->conv.collect_params(out);
            st->gn.collect_params(out);
        }
        cnn_fc_->collect_params(out);
        cnn_head_->collect_params(out);
    } else {
        patch_embed_->collect_params(out);
        out.push_back(cls_token_.get());
        out.push_back(pos_embed_.get());
        for (auto& b : blocks_) b->collect_params(out);
        final_ln_->collect_params(out);
        vit_head_->collect_params(out);
    }
    return out;
}

std::string TargetModel::weights_sha256() {
    auto ps = params();
    return params_sha256(ps);
}

// ------------------------------------------------------------------ training

TargetTrainResult train_toy_targets(const SplitDataset& data, TargetConfig cfg,
                                    const TargetTrainOptions& opt) {
    if (data.train.num_classes < 2)
        throw ConfigError("target training needs at least 2 classes");
    cfg.num_classes = data.train.num_classes;
    cfg.image_side = data.train.image_side();
    Rng rng(opt.seed);
    auto model = std::make_unique<TargetModel>(cfg, rng);
    nn::Adam optim(model->params(), opt.lr);

    const int64_t n = data.train.size();
    const int64_t side = cfg.image_side;
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;

    for (int64_t epoch = 0; epoch < opt.epochs; ++epoch) {
        rng.shuffle(order);
        for (int64_t start = 0; start < n; start += opt.batch_size) {
            const int64_t bs = std::min(opt.batch_size, n - start);
            Tensor batch({bs, 3, side, side});
            std::vector<int64_t> labels(bs);
            for (int64_t i = 0; i < bs; ++i) {
                const int64_t src = order[start + i];
                std::copy(data.train.images.data() + src * 3 * side * side,
                          data.train.images.data() + (src + 1) * 3 * side * side,
                          batch.data() + i * 3 * side * side);
                labels[i] = data.train.labels[src];
            }
            Tensor logits = model->forward(model->normalize(batch));
            Tensor glogits;
            const double loss = nn::softmax_cross_entropy(logits, labels, &glogits);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "target training diverged: loss=" << loss << " epoch=" << epoch
                    << " step=" << start / opt.batch_size;
                throw TrainingError(msg.str());
            }
            optim.zero_grad();
            model->backward_params(glogits);
            optim.step();
            if (opt.verbose && (start / opt.batch_size) % 16 == 0)
                std::fprintf(stderr, "[target] epoch %lld step %lld loss %.4f\n",
                             static_cast<long long>(epoch),
                             static_cast<long long>(start / opt.batch_size), loss);
        }
    }
    model->set_frozen(true);
    model->set_seed(opt.seed);
    TargetTrainResult out;
    out.val_accuracy = top1_accuracy(*model, data.val);
    out.model = std::move(model);
    return out;
}

std::vector<int64_t> predict_classes(TargetModel& model, const Tensor& images,
                                     int64_t batch_size) {
    const int64_t n = images.shape()[0], side = images.shape()[2];
    const int64_t k = model.config().num_classes;
    std::vector<int64_t> out(n);
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t bs = std::min(batch_size, n - start);
        Tensor batch({bs, 3, side, side});
        std::copy(images.data() + start * 3 * side * side,
                  images.data() + (start + bs) * 3 * side * side, batch.data());
        Tensor logits = model.forward(model.normalize(batch));
        for (int64_t i = 0; i < bs; ++i) {
            const double* row = logits.data() + i * k;
            out[start + i] =
                std::max_element(row, row + k) - row;
        }
    }
    return out;
}

double top1_accuracy(TargetModel& model, const Dataset& data, int64_t batch_size) {
    if (data.size() == 0) return 0.0;
    const auto pred = predict_classes(model, data.images, batch_size);
    int64_t hits = 0;
    for (int64_t i = 0; i < data.size(); ++i)
        if (pred[i] == data.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace scan
