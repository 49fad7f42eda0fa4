#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <vector>

#include "scan/kernels.hpp"
#include "scan/rng.hpp"
#include "scan/tensor.hpp"

using namespace scan;

namespace {

Tensor randn(std::vector<int64_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("matmul family agrees with the reference") {
    Rng rng(1);
    Tensor x = randn({9, 13}, rng);
    Tensor w = randn({13, 7}, rng);
    Tensor wt = randn({7, 13}, rng);
    Tensor g = randn({9, 7}, rng);

    Tensor a, b;
    kernels::matmul(x, w, a);
    ref::matmul(x, w, b);
    CHECK(max_abs_diff(a, b) < 1e-12);

    kernels::matmul_nt(x, wt, a);
    ref::matmul_nt(x, wt, b);
    CHECK(max_abs_diff(a, b) < 1e-12);

    kernels::matmul_tn(x, g, a);
    ref::matmul_tn(x, g, b);
    CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("matmul handles a hand-checked 2x2") {
    Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor w = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor y;
    kernels::matmul(x, w, y);
    CHECK(y[0] == 19);
    CHECK(y[1] == 22);
    CHECK(y[2] == 43);
    CHECK(y[3] == 50);
}

TEST_CASE("conv2d forward/backward agree with the reference across geometries") {
    Rng rng(2);
    struct Geo {
        int64_t n, c, h, o, k, stride, pad;
    };
    for (Geo geo : {Geo{2, 3, 8, 4, 3, 1, 1}, Geo{1, 4, 9, 2, 3, 2, 1},
                    Geo{2, 2, 7, 3, 5, 2, 2}, Geo{1, 1, 6, 1, 1, 1, 0}}) {
        Tensor x = randn({geo.n, geo.c, geo.h, geo.h}, rng);
        Tensor w = randn({geo.o, geo.c, geo.k, geo.k}, rng);
        Tensor b = randn({geo.o}, rng);

        Tensor y1, y2;
        kernels::conv2d_forward(x, w, b, geo.stride, geo.pad, y1);
        ref::conv2d_forward(x, w, b, geo.stride, geo.pad, y2);
        CHECK(max_abs_diff(y1, y2) < 1e-12);

        Tensor gy = randn(y1.shape(), rng);
        Tensor gx1(x.shape()), gx2(x.shape());
        kernels::conv2d_backward_input(gy, w, geo.stride, geo.pad, gx1);
        ref::conv2d_backward_input(gy, w, geo.stride, geo.pad, gx2);
        CHECK(max_abs_diff(gx1, gx2) < 1e-12);

        Tensor gw1(w.shape()), gb1({geo.o});
        Tensor gw2(w.shape()), gb2({geo.o});
        kernels::conv2d_backward_weight(gy, x, geo.stride, geo.pad, gw1, gb1);
        ref::conv2d_backward_weight(gy, x, geo.stride, geo.pad, gw2, gb2);
        CHECK(max_abs_diff(gw1, gw2) < 1e-12);
        CHECK(max_abs_diff(gb1, gb2) < 1e-12);
    }
}

TEST_CASE("conv2d backward-weight accumulates instead of overwriting") {
    Rng rng(3);
    Tensor x = randn({1, 2, 6, 6}, rng);
    Tensor w = randn({3, 2, 3, 3}, rng);
    Tensor y;
    kernels::conv2d_forward(x, w, Tensor(), 1, 1, y);
    Tensor gy = randn(y.shape(), rng);

    Tensor gw(w.shape()), gb({3});
    kernels::conv2d_backward_weight(gy, x, 1, 1, gw, gb);
    Tensor gw2 = gw, gb2 = gb;
    kernels::conv2d_backward_weight(gy, x, 1, 1, gw2, gb2);
    for (int64_t i = 0; i < gw.numel(); ++i)
        CHECK(gw2[i] == doctest::Approx(2.0 * gw[i]).epsilon(1e-12));
}

TEST_CASE("transposed conv matches the reference and inverts conv geometry") {
    Rng rng(4);
    Tensor x = randn({2, 4, 5, 5}, rng);
    Tensor w = randn({4, 3, 4, 4}, rng);
    Tensor b = randn({3}, rng);

    Tensor y1, y2;
    kernels::conv_transpose2d_forward(x, w, b, 2, 1, y1);
    ref::conv_transpose2d_forward(x, w, b, 2, 1, y2);
    CHECK(max_abs_diff(y1, y2) < 1e-11);
    // OH = (5-1)*2 - 2 + 4 = 10
    CHECK(y1.shape() == std::vector<int64_t>{2, 3, 10, 10});

    Tensor gy = randn(y1.shape(), rng);
    Tensor gx(x.shape());
    kernels::conv_transpose2d_backward_input(gy, w, 2, 1, gx);
    REQUIRE(gx.shape() == x.shape());
    // d/dx of tconv is an ordinary conv with the same weights; spot check
    // one element with finite differences.
    const double h = 1e-6;
    for (int64_t i : {int64_t{0}, int64_t{37}, int64_t{x.numel() - 1}}) {
        Tensor xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        Tensor yp, ym;
        kernels::conv_transpose2d_forward(xp, w, b, 2, 1, yp);
        kernels::conv_transpose2d_forward(xm, w, b, 2, 1, ym);
        double fd = 0.0;
        for (int64_t j = 0; j < gy.numel(); ++j)
            fd += gy[j] * (yp[j] - ym[j]) / (2 * h);
        CHECK(std::fabs(fd - gx[i]) < 1e-5 * std::max(1.0, std::fabs(fd)));
    }

    Tensor gw(w.shape()), gb({3});
    kernels::conv_transpose2d_backward_weight(gy, x, 2, 1, gw, gb);
    for (int64_t i : {int64_t{0}, int64_t{19}, int64_t{w.numel() - 1}}) {
        Tensor wp = w, wm = w;
        wp[i] += h;
        wm[i] -= h;
        Tensor yp, ym;
        kernels::conv_transpose2d_forward(x, wp, b, 2, 1, yp);
        kernels::conv_transpose2d_forward(x, wm, b, 2, 1, ym);
        double fd = 0.0;
        for (int64_t j = 0; j < gy.numel(); ++j)
            fd += gy[j] * (yp[j] - ym[j]) / (2 * h);
        CHECK(std::fabs(fd - gw[i]) < 1e-5 * std::max(1.0, std::fabs(fd)));
    }
}

TEST_CASE("separable blur equals the full 2-D convolution") {
    Rng rng(5);
    Tensor x({3, 21, 21});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(0.0, 1.0);
    Tensor fast, slow;
    kernels::gaussian_blur(x, 9, 2.5, fast);
    ref::gaussian_blur(x, 9, 2.5, slow);
    CHECK(max_abs_diff(fast, slow) < 1e-12);
}

TEST_CASE("blur preserves constants even with kernels larger than the image") {
    Tensor x = Tensor::full({1, 5, 5}, 0.8);
    Tensor y;
    kernels::gaussian_blur(x, 13, 4.0, y);
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(y[i] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("blur rejects even kernel sizes") {
    Tensor x({1, 8, 8});
    Tensor y;
    CHECK_THROWS_AS(kernels::gaussian_blur(x, 4, 1.0, y), std::invalid_argument);
}

TEST_CASE("softmax rows are stable, positive, and sum to one") {
    Tensor x = Tensor::from_data({2, 3}, {1000.0, 1001.0, 1002.0, -5.0, 0.0, 5.0});
    Tensor y, yr;
    kernels::softmax_rows(x, y);
    ref::softmax_rows(x, yr);
    CHECK(max_abs_diff(y, yr) < 1e-15);
    for (int64_t r = 0; r < 2; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < 3; ++c) {
            CHECK(y.at(r, c) > 0.0);
            CHECK(std::isfinite(y.at(r, c)));
            s += y.at(r, c);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(y.at(0, 2) > y.at(0, 1));
}

TEST_CASE("average pooling computes exact block means") {
    Tensor x({1, 4, 4});
    for (int64_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
    Tensor y = kernels::avg_pool_to(x, 2);
    REQUIRE(y.shape() == std::vector<int64_t>{1, 2, 2});
    CHECK(y[0] == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
    CHECK(y[1] == doctest::Approx((2 + 3 + 6 + 7) / 4.0));
    CHECK(y[2] == doctest::Approx((8 + 9 + 12 + 13) / 4.0));
    CHECK(y[3] == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
    CHECK_THROWS_AS(kernels::avg_pool_to(x, 3), std::invalid_argument);
}

TEST_CASE("bilinear upsample is exact on constants and preserves range") {
    Tensor c = Tensor::full({2, 3, 3}, 0.25);
    Tensor up = kernels::bilinear_upsample(c, 12);
    REQUIRE(up.shape() == std::vector<int64_t>{2, 12, 12});
    for (int64_t i = 0; i < up.numel(); ++i)
        CHECK(up[i] == doctest::Approx(0.25).epsilon(1e-12));

    Rng rng(6);
    Tensor x({1, 4, 4});
    for (int64_t i = 0; i < 16; ++i) x[i] = rng.uniform(0.0, 1.0);
    Tensor y = kernels::bilinear_upsample(x, 16);
    for (int64_t i = 0; i < y.numel(); ++i) {
        CHECK(y[i] >= 0.0);
        CHECK(y[i] <= 1.0);
    }
}

TEST_CASE("bilinear upsample also downscales") {
    Tensor x = Tensor::full({1, 8, 8}, 0.6);
    Tensor y = kernels::bilinear_upsample(x, 4);
    REQUIRE(y.shape() == std::vector<int64_t>{1, 4, 4});
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(y[i] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("reflect-101 index folding") {
    // n = 4: ... 2 1 | 0 1 2 3 | 2 1 0 1 ...
    CHECK(reflect_index(-2, 4) == 2);
    CHECK(reflect_index(-1, 4) == 1);
    CHECK(reflect_index(0, 4) == 0);
    CHECK(reflect_index(3, 4) == 3);
    CHECK(reflect_index(4, 4) == 2);
    CHECK(reflect_index(5, 4) == 1);
    CHECK(reflect_index(9, 4) == 3);
    CHECK(reflect_index(0, 1) == 0);
    CHECK(reflect_index(-7, 1) == 0);
}

TEST_CASE("kernel output is identical for any thread count") {
    const int max_threads = omp_get_max_threads();
    Rng rng(7);
    Tensor x = randn({2, 3, 12, 12}, rng);
    Tensor w = randn({5, 3, 3, 3}, rng);
    Tensor b = randn({5}, rng);
    Tensor mx = randn({17, 23}, rng);
    Tensor mw = randn({23, 11}, rng);

    omp_set_num_threads(1);
    Tensor y1, m1;
    kernels::conv2d_forward(x, w, b, 1, 1, y1);
    kernels::matmul(mx, mw, m1);

    omp_set_num_threads(std::max(4, max_threads));
    Tensor y4, m4;
    kernels::conv2d_forward(x, w, b, 1, 1, y4);
    kernels::matmul(mx, mw, m4);
    omp_set_num_threads(max_threads);

    CHECK(max_abs_diff(y1, y4) == 0.0);
    CHECK(max_abs_diff(m1, m4) == 0.0);
}
