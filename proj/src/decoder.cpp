#include "scan/decoder.hpp"

#include <cmath>

#include "scan/errors.hpp"

namespace scan {

std::string decoder_variant_name(DecoderVariant v) {
    return v == DecoderVariant::residual ? "residual" : "transformer";
}

DecoderVariant decoder_variant_from_name(const std::string& s) {
    if (s == "residual") return DecoderVariant::residual;
    if (s == "transformer") return DecoderVariant::transformer;
    throw ConfigError("unknown decoder variant: " + s);
}

int64_t DecoderConfig::n_stages() const {
    if (feature_side <= 0 || image_side <= 0 || image_side % feature_side != 0)
        return -1;
    const int64_t ratio = image_side / feature_side;
    if ((ratio & (ratio - 1)) != 0 || ratio < 2) return -1;
    int64_t n = 0;
    for (int64_t r = ratio; r > 1; r >>= 1) ++n;
    return n;
}

struct Decoder::Stage {
    nn::ResidualBlock res1, res2;
    nn::ConvTranspose2d up;
    nn::GroupNorm gn;
    nn::ReLU act;

    Stage(const std::string& name, int64_t ch, int64_t out_ch, Rng& rng)
        : res1(name + ".res1", ch, rng),
          res2(name + ".res2", ch, rng),
          up(name + ".up", ch, out_ch, 4, 2, 1, rng),
          gn(name + ".gn", out_ch, nn::GroupNorm::default_groups(out_ch)) {}

    Tensor forward(const Tensor& x) {
        return act.forward(gn.forward(up.forward(res2.forward(res1.forward(x)))));
    }
    Tensor backward(const Tensor& gy, bool wp) {
        return res1.backward(
            res2.backward(up.backward(gn.backward(act.backward(gy, wp), wp), wp), wp),
            wp);
    }
    void collect_params(std::vector<nn::Param*>& out) {
        res1.collect_params(out);
        res2.collect_params(out);
        up.collect_params(out);
        gn.collect_params(out);
    }
};

Decoder::Decoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int64_t n_stages = cfg.n_stages();
    if (n_stages < 1)
        throw ConfigError("decoder upsampling ratio must be a positive power of two "
                          "(feature side " +
                          std::to_string(cfg.feature_side) + ", image side " +
                          std::to_string(cfg.image_side) + ")");
    if (cfg.input_channels < 1) throw ConfigError("decoder input channels must be >= 1");

    if (cfg.variant == DecoderVariant::transformer) {
        if (cfg.input_channels % cfg.n_attention_heads != 0)
            throw ConfigError("token dim not divisible by attention heads");
        const int64_t t0 = cfg.feature_side * cfg.feature_side;
        pos_embed_ =
            std::make_unique<nn::Param>("dec.pos_embed", Tensor({t0, cfg.input_channels}));
        for (int64_t i = 0; i < pos_embed_->value.numel(); ++i)
            pos_embed_->value[i] = rng.normal() * 0.02;
        for (int64_t k = 0; k < cfg.n_attention_blocks; ++k)
            attn_blocks_.push_back(std::make_unique<nn::TransformerBlock>(
                "dec.attn_" + std::to_string(k + 1), cfg.input_channels,
                cfg.n_attention_heads, 2, rng));
    }

    std::vector<int64_t> widths(n_stages + 1);
    for (int64_t i = 0; i <= n_stages; ++i)
        widths[i] = std::max(cfg.base_width >> i, cfg.width_floor);

    entry_ = std::make_unique<nn::Conv2d>("dec.entry", cfg.input_channels, widths[0], 3,
                                          1, 1, rng);
    entry_gn_ = std::make_unique<nn::GroupNorm>("dec.entry.gn", widths[0],
                                                nn::GroupNorm::default_groups(widths[0]));
    for (int64_t i = 0; i < n_stages; ++i)
        stages_.push_back(std::make_unique<Stage>("dec.stage_" + std::to_string(i + 1),
                                                  widths[i], widths[i + 1], rng));
    proj_ = std::make_unique<nn::Conv2d>("dec.proj", widths[n_stages], 3, 1, 1, 0, rng);
    conf_c1_ = std::make_unique<nn::Conv2d>("dec.conf.c1", widths[0], widths[0], 3, 1, 1, rng);
    conf_c2_ = std::make_unique<nn::Conv2d>("dec.conf.c2", widths[0], 1, 1, 1, 0, rng);
    out_bias_ = std::make_unique<nn::Param>(
        "dec.out.pos_bias", Tensor({4, cfg.image_side, cfg.image_side}));
}

Decoder::~Decoder() = default;

Tensor Decoder::forward(const Tensor& x) {
    if (x.rank() != 4 || x.shape()[1] != cfg_.input_channels ||
        x.shape()[2] != cfg_.feature_side || x.shape()[3] != cfg_.feature_side)
        throw std::invalid_argument("decoder input shape " + x.shape_str() +
                                    " does not match configured geometry");
    Tensor h = x;
    if (cfg_.variant == DecoderVariant::transformer) {
        const int64_t n = x.shape()[0], c = cfg_.input_channels, f = cfg_.feature_side;
        const int64_t t0 = f * f;
        Tensor tok({n, t0, c});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t t = 0; t < t0; ++t) {
                const int64_t y = t / f, xx = t % f;
                for (int64_t ch = 0; ch < c; ++ch)
                    tok[(i * t0 + t) * c + ch] =
                        x[((i * c + ch) * f + y) * f + xx] + pos_embed_->value[t * c + ch];
            }
        for (auto& b : attn_blocks_) tok = b->forward(tok);
        h = Tensor({n, c, f, f});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t t = 0; t < t0; ++t) {
                const int64_t y = t / f, xx = t % f;
                for (int64_t ch = 0; ch < c; ++ch)
                    h[((i * c + ch) * f + y) * f + xx] = tok[(i * t0 + t) * c + ch];
            }
    }
    h = entry_act_.forward(entry_gn_->forward(entry_->forward(h)));
    Tensor conf = conf_c2_->forward(conf_act_.forward(conf_c1_->forward(h)));
    for (auto& st : stages_) h = st->forward(h);
    Tensor rec = proj_->forward(h);

    const int64_t n = rec.shape()[0], s = cfg_.image_side, f = cfg_.feature_side;
    const int64_t r = s / f, hw = s * s;
    Tensor out({n, 4, s, s});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < 3 * hw; ++j) out[i * 4 * hw + j] = rec[i * 3 * hw + j];
        // nearest-neighbor upsample of the cell-level confidence logits
        double* oc = out.data() + (i * 4 + 3) * hw;
        const double* cc = conf.data() + i * f * f;
        for (int64_t y = 0; y < s; ++y)
            for (int64_t x = 0; x < s; ++x) oc[y * s + x] = cc[(y / r) * f + x / r];
        for (int64_t j = 0; j < 4 * hw; ++j) out[i * 4 * hw + j] += out_bias_->value[j];
    }
    return out;
}

Tensor Decoder::backward(const Tensor& gy, bool wp) {
    const int64_t n = gy.shape()[0], s = cfg_.image_side, f = cfg_.feature_side;
    const int64_t r = s / f, hw = s * s;
    if (wp)
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < 4 * hw; ++j) out_bias_->grad[j] += gy[i * 4 * hw + j];
    Tensor grec({n, 3, s, s});
    Tensor gconf({n, 1, f, f});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < 3 * hw; ++j) grec[i * 3 * hw + j] = gy[i * 4 * hw + j];
        const double* gc = gy.data() + (i * 4 + 3) * hw;
        double* acc = gconf.data() + i * f * f;
        for (int64_t y = 0; y < s; ++y)
            for (int64_t x = 0; x < s; ++x) acc[(y / r) * f + x / r] += gc[y * s + x];
    }
    Tensor gh_conf = conf_c1_->backward(conf_act_.backward(conf_c2_->backward(gconf, wp), wp), wp);
    Tensor g = proj_->backward(grec, wp);
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it)
        g = (*it)->backward(g, wp);
    for (int64_t j = 0; j < g.numel(); ++j) g[j] += gh_conf[j];
    g = entry_->backward(entry_gn_->backward(entry_act_.backward(g, wp), wp), wp);
    if (cfg_.variant == DecoderVariant::transformer) {
        const int64_t n = g.shape()[0], c = cfg_.input_channels, f = cfg_.feature_side;
        const int64_t t0 = f * f;
        Tensor gtok({n, t0, c});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t t = 0; t < t0; ++t) {
                const int64_t y = t / f, xx = t % f;
                for (int64_t ch = 0; ch < c; ++ch)
                    gtok[(i * t0 + t) * c + ch] = g[((i * c + ch) * f + y) * f + xx];
            }
        for (auto it = attn_blocks_.rbegin(); it != attn_blocks_.rend(); ++it)
            gtok = (*it)->backward(gtok, wp);
        if (wp) {
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < t0 * c; ++j)
                    pos_embed_->grad[j] += gtok[i * t0 * c + j];
        }
        Tensor gx({n, c, f, f});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t t = 0; t < t0; ++t) {
                const int64_t y = t / f, xx = t % f;
                for (int64_t ch = 0; ch < c; ++ch)
                    gx[((i * c + ch) * f + y) * f + xx] = gtok[(i * t0 + t) * c + ch];
            }
        return gx;
    }
    return g;
}

Tensor Decoder::decode(const masking::MaskedFeature& x) {
    Tensor batch =
        x.values.reshaped({1, cfg_.input_channels, cfg_.feature_side, cfg_.feature_side});
    return forward(batch).reshaped({4, cfg_.image_side, cfg_.image_side});
}

std::vector<nn::Param*> Decoder::params() {
    std::vector<nn::Param*> out;
    if (pos_embed_) out.push_back(pos_embed_.get());
    for (auto& b : attn_blocks_) b->collect_params(out);
    entry_->collect_params(out);
    entry_gn_->collect_params(out);
    for (auto& st : stages_) st->collect_params(out);
    proj_->collect_params(out);
    conf_c1_->collect_params(out);
    conf_c2_->collect_params(out);
    out.push_back(out_bias_.get());
    return out;
}

int64_t Decoder::param_count() {
    auto ps = params();
    return nn::param_count(ps);
}

std::unique_ptr<Decoder> build_decoder(const DecoderConfig& cfg, Rng& rng) {
    return std::make_unique<Decoder>(cfg, rng);
}

}  // namespace scan
