#include <doctest.h>

#include <cmath>

#include "scan/core_math.hpp"
#include "scan/decoder.hpp"
#include "scan/errors.hpp"
#include "scan/nn.hpp"
#include "scan/rng.hpp"

using namespace scan;

namespace {

DecoderConfig make_cfg(int64_t feature_side, int64_t image_side,
                       DecoderVariant variant = DecoderVariant::residual) {
    DecoderConfig cfg;
    cfg.variant = variant;
    cfg.tap_layer = "final_conv";
    cfg.input_channels = 16;
    cfg.feature_side = feature_side;
    cfg.image_side = image_side;
    cfg.base_width = 16;
    cfg.width_floor = 8;
    return cfg;
}

Tensor randn(std::vector<int64_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("stage count is the log2 upsampling ratio") {
    CHECK(make_cfg(4, 32).n_stages() == 3);
    CHECK(make_cfg(8, 32).n_stages() == 2);
    CHECK(make_cfg(14, 224).n_stages() == 4);
    CHECK(make_cfg(7, 224).n_stages() == 5);
}

TEST_CASE("decoder maps features to a 4-channel image-resolution output") {
    Rng rng(1);
    for (auto variant : {DecoderVariant::residual, DecoderVariant::transformer}) {
        auto dec = build_decoder(make_cfg(4, 32, variant), rng);
        Tensor x = randn({2, 16, 4, 4}, rng);
        Tensor y = dec->forward(x);
        CHECK(y.shape() == std::vector<int64_t>{2, 4, 32, 32});

        masking::MaskedFeature mf;
        mf.values = randn({16, 4, 4}, rng);
        mf.mask = Tensor::full({16, 4, 4}, 1.0);
        Tensor single = dec->decode(mf);
        CHECK(single.shape() == std::vector<int64_t>{4, 32, 32});
    }
}

TEST_CASE("decoder rejects non-power-of-two upsampling ratios") {
    Rng rng(2);
    CHECK_THROWS_AS(build_decoder(make_cfg(5, 32), rng), ConfigError);
    CHECK_THROWS_AS(build_decoder(make_cfg(4, 28), rng), ConfigError);
    CHECK_THROWS_AS(build_decoder(make_cfg(8, 8), rng), ConfigError);
    CHECK_THROWS_AS(build_decoder(make_cfg(0, 32), rng), ConfigError);
}

TEST_CASE("decoder output is deterministic and finite on edge inputs") {
    Rng rng(3);
    auto dec = build_decoder(make_cfg(4, 32), rng);
    Tensor zeros({1, 16, 4, 4});
    Tensor y1 = dec->forward(zeros);
    Tensor y2 = dec->forward(zeros);
    for (int64_t i = 0; i < y1.numel(); ++i) {
        CHECK(std::isfinite(y1[i]));
        CHECK(y1[i] == y2[i]);
    }
    CHECK_THROWS_AS(dec->forward(Tensor({1, 16, 8, 8})), std::invalid_argument);
}

TEST_CASE("same seed builds the same decoder") {
    Rng a(7), b(7);
    auto d1 = build_decoder(make_cfg(4, 32), a);
    auto d2 = build_decoder(make_cfg(4, 32), b);
    auto p1 = d1->params();
    auto p2 = d2->params();
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i]->name == p2[i]->name);
        for (int64_t j = 0; j < p1[i]->value.numel(); ++j)
            CHECK(p1[i]->value[j] == p2[i]->value[j]);
    }
    CHECK(d1->param_count() == d2->param_count());
    CHECK(d1->param_count() == nn::param_count(p1));
}

TEST_CASE("every parameter receives gradient from a single backward pass") {
    Rng rng(11);
    for (auto variant : {DecoderVariant::residual, DecoderVariant::transformer}) {
        auto dec = build_decoder(make_cfg(4, 32, variant), rng);
        Tensor x = randn({2, 16, 4, 4}, rng);
        Tensor y = dec->forward(x);
        Tensor gy(y.shape());
        for (int64_t i = 0; i < gy.numel(); ++i) gy[i] = rng.normal();
        Tensor gx = dec->backward(gy, true);
        CHECK(gx.shape() == x.shape());

        for (nn::Param* p : dec->params()) {
            double norm = 0.0;
            for (int64_t i = 0; i < p->grad.numel(); ++i)
                norm += p->grad[i] * p->grad[i];
            INFO("param ", p->name);
            CHECK(norm > 0.0);
        }
    }
}

TEST_CASE("decoder backward matches finite differences through the full stack") {
    Rng rng(13);
    auto dec = build_decoder(make_cfg(2, 8), rng);
    Tensor x = randn({1, 16, 2, 2}, rng);
    Tensor y = dec->forward(x);
    Tensor probe(y.shape());
    for (int64_t i = 0; i < probe.numel(); ++i) probe[i] = rng.normal();
    Tensor gx = dec->backward(probe, false);

    const double h = 1e-5;
    for (int64_t i : {int64_t{0}, int64_t{17}, int64_t{x.numel() - 1}}) {
        Tensor xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        Tensor yp = dec->forward(xp);
        Tensor ym = dec->forward(xm);
        double fd = 0.0;
        for (int64_t j = 0; j < probe.numel(); ++j)
            fd += probe[j] * (yp[j] - ym[j]) / (2 * h);
        CHECK(std::fabs(fd - gx[i]) < 2e-4 * std::max(1.0, std::fabs(fd)));
    }
}

TEST_CASE("200 optimizer steps halve the loss on a single sample") {
    Rng rng(17);
    auto dec = build_decoder(make_cfg(4, 32), rng);
    Tensor x = randn({1, 16, 4, 4}, rng);

    Tensor img({3, 32, 32});
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform(0.0, 1.0);
    core_math::ReconTarget target = core_math::blur_target(img, 4);

    nn::Adam opt(dec->params(), 1e-3);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
        Tensor out4 = dec->forward(x);
        Tensor single = Tensor::from_data(
            {4, 32, 32},
            std::vector<double>(out4.data(), out4.data() + out4.numel()));
        Tensor grad;
        core_math::LossTerms lt = core_math::total_loss_with_grad(
            single, target, 4.0, 0.1, core_math::ConfVariant::sine, grad);
        if (step == 0) first = lt.total;
        last = lt.total;
        opt.zero_grad();
        Tensor gy = Tensor::from_data(
            {1, 4, 32, 32},
            std::vector<double>(grad.data(), grad.data() + grad.numel()));
        dec->backward(gy, true);
        opt.step();
    }
    CHECK(last < 0.5 * first);
}
