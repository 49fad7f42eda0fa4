#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "scan/nn.hpp"
#include "scan/rng.hpp"
#include "scan/tensor.hpp"

using namespace scan;
using namespace scan::nn;

namespace {

Tensor randn(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

double weighted_sum(const Tensor& y, const Tensor& w) {
    double s = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
    return s;
}

// Checks d(sum(w .* layer(x)))/dx and /dparams against central differences.
// Probing a fixed random subset keeps the quadratic cost down.
void check_layer_gradients(Layer& layer, const Tensor& x, Rng& rng,
                           double tol = 2e-5, double h = 1e-5) {
    Tensor probe;

    auto loss_at = [&](const Tensor& input) {
        Tensor y = layer.forward(input);
        if (probe.numel() == 0) probe = randn(y.shape(), rng);
        return weighted_sum(y, probe);
    };

    loss_at(x);  // fixes the probe direction

    std::vector<Param*> params;
    layer.collect_params(params);
    for (Param* p : params) p->grad = Tensor(p->grad.shape());

    // Exactly one backward: layers accumulate parameter gradients.
    layer.forward(x);
    Tensor gx = layer.backward(probe, true);
    REQUIRE(gx.shape() == x.shape());

    auto pick = [&](int64_t n) {
        std::vector<int64_t> idx;
        for (int64_t k = 0; k < std::min<int64_t>(n, 12); ++k)
            idx.push_back(static_cast<int64_t>(rng.below(static_cast<uint64_t>(n))));
        return idx;
    };

    for (int64_t i : pick(x.numel())) {
        Tensor xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (loss_at(xp) - loss_at(xm)) / (2 * h);
        CHECK(std::fabs(gx[i] - fd) < tol * std::max(1.0, std::fabs(fd)));
    }

    for (Param* p : params) {
        for (int64_t i : pick(p->value.numel())) {
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double up = loss_at(x);
            p->value[i] = keep - h;
            const double down = loss_at(x);
            p->value[i] = keep;
            const double fd = (up - down) / (2 * h);
            CHECK(std::fabs(p->grad[i] - fd) < tol * std::max(1.0, std::fabs(fd)));
        }
    }
}

}  // namespace

TEST_CASE("conv2d layer gradients") {
    Rng rng(101);
    Conv2d layer("c", 3, 5, 3, 2, 1, rng);
    Tensor x = randn({2, 3, 8, 8}, rng);
    check_layer_gradients(layer, x, rng);
}

TEST_CASE("conv transpose layer gradients") {
    Rng rng(102);
    ConvTranspose2d layer("t", 4, 3, 4, 2, 1, rng);
    Tensor x = randn({2, 4, 5, 5}, rng);
    check_layer_gradients(layer, x, rng);
}

TEST_CASE("linear layer gradients and shape") {
    Rng rng(103);
    Linear layer("fc", 7, 4, rng);
    Tensor x = randn({6, 7}, rng);
    Tensor y = layer.forward(x);
    REQUIRE(y.shape() == std::vector<int64_t>{6, 4});
    check_layer_gradients(layer, x, rng);
}

TEST_CASE("relu and gelu gradients") {
    Rng rng(104);
    Tensor x = randn({3, 17}, rng);
    for (int64_t i = 0; i < x.numel(); ++i)
        if (std::fabs(x[i]) < 1e-3) x[i] = 0.5;  // stay clear of the relu kink
    ReLU relu;
    check_layer_gradients(relu, x, rng);
    GELU gelu;
    check_layer_gradients(gelu, x, rng, 5e-5);
}

TEST_CASE("group norm normalizes groups and backpropagates") {
    Rng rng(105);
    GroupNorm layer("gn", 8, 4);
    Tensor x = randn({2, 8, 4, 4}, rng, 3.0);
    Tensor y = layer.forward(x);
    REQUIRE(y.shape() == x.shape());
    // gamma=1, beta=0 at init: each group of each sample is standardized.
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t g = 0; g < 4; ++g) {
            double mean = 0.0, var = 0.0;
            for (int64_t c = 2 * g; c < 2 * g + 2; ++c)
                for (int64_t i = 0; i < 16; ++i)
                    mean += y[((n * 8 + c) * 16) + i];
            mean /= 32.0;
            for (int64_t c = 2 * g; c < 2 * g + 2; ++c)
                for (int64_t i = 0; i < 16; ++i) {
                    const double d = y[((n * 8 + c) * 16) + i] - mean;
                    var += d * d;
                }
            var /= 32.0;
            CHECK(std::fabs(mean) < 1e-10);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        }
    check_layer_gradients(layer, x, rng, 5e-5);
    CHECK(GroupNorm::default_groups(12) == 6);
    CHECK(GroupNorm::default_groups(8) == 8);
    CHECK(GroupNorm::default_groups(7) == 7);
}

TEST_CASE("layer norm standardizes rows and backpropagates") {
    Rng rng(106);
    LayerNorm layer("ln", 16);
    Tensor x = randn({5, 16}, rng, 2.0);
    Tensor y = layer.forward(x);
    for (int64_t r = 0; r < 5; ++r) {
        double mean = 0.0, var = 0.0;
        for (int64_t c = 0; c < 16; ++c) mean += y.at(r, c);
        mean /= 16.0;
        for (int64_t c = 0; c < 16; ++c) {
            const double d = y.at(r, c) - mean;
            var += d * d;
        }
        var /= 16.0;
        CHECK(std::fabs(mean) < 1e-10);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
    check_layer_gradients(layer, x, rng, 5e-5);
}

TEST_CASE("self-attention gradients") {
    Rng rng(107);
    MultiHeadSelfAttention layer("attn", 8, 2, rng);
    Tensor x = randn({2, 5, 8}, rng);
    Tensor y = layer.forward(x);
    REQUIRE(y.shape() == x.shape());
    check_layer_gradients(layer, x, rng, 1e-4);
}

TEST_CASE("transformer block gradients") {
    Rng rng(108);
    TransformerBlock layer("blk", 8, 2, 2, rng);
    Tensor x = randn({2, 4, 8}, rng);
    Tensor y = layer.forward(x);
    REQUIRE(y.shape() == x.shape());
    check_layer_gradients(layer, x, rng, 2e-4);
}

TEST_CASE("residual block gradients and skip path") {
    Rng rng(109);
    ResidualBlock layer("res", 4, rng);
    Tensor x = randn({1, 4, 6, 6}, rng);
    Tensor y = layer.forward(x);
    REQUIRE(y.shape() == x.shape());
    check_layer_gradients(layer, x, rng, 1e-4);
}

TEST_CASE("global average pool averages and spreads gradient evenly") {
    Tensor x({1, 2, 2, 2});
    for (int64_t i = 0; i < 8; ++i) x[i] = static_cast<double>(i);
    GlobalAvgPool pool;
    Tensor y = pool.forward(x);
    REQUIRE(y.shape() == std::vector<int64_t>{1, 2});
    CHECK(y[0] == doctest::Approx(1.5));
    CHECK(y[1] == doctest::Approx(5.5));
    Tensor gy = Tensor::from_data({1, 2}, {4.0, 8.0});
    Tensor gx = pool.backward(gy, false);
    for (int64_t i = 0; i < 4; ++i) CHECK(gx[i] == doctest::Approx(1.0));
    for (int64_t i = 4; i < 8; ++i) CHECK(gx[i] == doctest::Approx(2.0));
}

TEST_CASE("softmax cross entropy equals -log p and its gradient is p - onehot") {
    Tensor logits = Tensor::from_data({2, 3}, {2.0, 1.0, 0.0, 0.0, 0.0, 0.0});
    std::vector<int64_t> labels = {0, 2};
    Tensor grad;
    const double loss = softmax_cross_entropy(logits, labels, &grad);

    const double z0 = std::exp(2.0) + std::exp(1.0) + 1.0;
    const double expect = (-std::log(std::exp(2.0) / z0) - std::log(1.0 / 3.0)) / 2.0;
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));

    const double h = 1e-6;
    for (int64_t i = 0; i < 6; ++i) {
        Tensor lp = logits, lm = logits;
        lp[i] += h;
        lm[i] -= h;
        const double fd = (softmax_cross_entropy(lp, labels, nullptr) -
                           softmax_cross_entropy(lm, labels, nullptr)) /
                          (2 * h);
        CHECK(std::fabs(grad[i] - fd) < 1e-6);
    }
}

TEST_CASE("adam drives a quadratic toward its minimum") {
    Param p("p", Tensor::from_data({2}, {5.0, -3.0}));
    Adam opt({&p}, 0.1);
    for (int step = 0; step < 400; ++step) {
        opt.zero_grad();
        p.grad[0] = 2.0 * (p.value[0] - 1.0);
        p.grad[1] = 2.0 * (p.value[1] + 2.0);
        opt.step();
    }
    CHECK(std::fabs(p.value[0] - 1.0) < 1e-3);
    CHECK(std::fabs(p.value[1] + 2.0) < 1e-3);
}

TEST_CASE("adam zero_grad clears accumulated gradients") {
    Param p("p", Tensor::from_data({1}, {1.0}));
    Adam opt({&p});
    p.grad[0] = 7.0;
    opt.zero_grad();
    CHECK(p.grad[0] == 0.0);
}

TEST_CASE("param naming and counting") {
    Rng rng(110);
    Conv2d conv("stem", 3, 4, 3, 1, 1, rng);
    std::vector<Param*> params;
    conv.collect_params(params);
    REQUIRE(params.size() == 2);
    CHECK(params[0]->name == "stem.w");
    CHECK(params[1]->name == "stem.b");
    CHECK(param_count(params) == 3 * 4 * 9 + 4);
}
