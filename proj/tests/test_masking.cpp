#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "scan/masking.hpp"
#include "scan/rng.hpp"
#include "scan/tensor.hpp"

using namespace scan;
using namespace scan::masking;

namespace {

Tensor vec(std::vector<double> v) {
    const int64_t n = static_cast<int64_t>(v.size());
    return Tensor::from_data({n}, std::move(v));
}

int64_t retained(const MaskedFeature& m) {
    int64_t n = 0;
    for (int64_t i = 0; i < m.mask.numel(); ++i) n += m.mask[i] > 0.5 ? 1 : 0;
    return n;
}

}  // namespace

TEST_CASE("percentile threshold interpolates linearly") {
    Tensor g = vec({1, 2, 3, 4});
    CHECK(percentile_threshold(g, 50.0) == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(percentile_threshold(g, 0.0) == 1.0);
    CHECK(percentile_threshold(g, 100.0) == 4.0);
    CHECK(percentile_threshold(g, 25.0) == doctest::Approx(1.75).epsilon(1e-15));

    Tensor c = vec({5, 5, 5, 5});
    for (double p : {0.0, 33.0, 95.0, 100.0})
        CHECK(percentile_threshold(c, p) == 5.0);
}

TEST_CASE("percentile threshold is order-based, not order-dependent") {
    Rng rng(7);
    std::vector<double> v(101);
    for (auto& x : v) x = rng.uniform(-5.0, 5.0);
    std::vector<double> shuffled = v;
    rng.shuffle(shuffled);
    for (double p : {0.0, 12.5, 50.0, 77.0, 100.0})
        CHECK(percentile_threshold(vec(v), p) ==
              doctest::Approx(percentile_threshold(vec(shuffled), p)).epsilon(1e-15));
}

TEST_CASE("percentile threshold rejects p outside [0,100] and empty input") {
    Tensor g = vec({1, 2, 3});
    CHECK_THROWS_AS(percentile_threshold(g, -0.5), std::domain_error);
    CHECK_THROWS_AS(percentile_threshold(g, 100.5), std::domain_error);
    Tensor empty({0});
    CHECK_THROWS_AS(percentile_threshold(empty, 50.0), std::invalid_argument);
}

TEST_CASE("mask keeps everything at p=0 and ties are all retained") {
    Tensor f = vec({10, 20, 30, 40});
    Tensor g = vec({0.4, 0.1, 0.4, 0.2});

    MaskedFeature all = gradient_mask(f, g, 0.0);
    CHECK(retained(all) == 4);
    for (int64_t i = 0; i < 4; ++i) CHECK(all.values[i] == f[i]);

    // Threshold lands exactly on the tied maximum; both copies survive.
    MaskedFeature top = gradient_mask(f, g, 100.0);
    CHECK(retained(top) == 2);
    CHECK(top.mask[0] == 1.0);
    CHECK(top.mask[2] == 1.0);
    CHECK(top.values[1] == 0.0);
    CHECK(top.values[3] == 0.0);
}

TEST_CASE("mask values are exactly source times indicator") {
    Rng rng(13);
    Tensor f({6, 5, 5});
    Tensor g({6, 5, 5});
    for (int64_t i = 0; i < f.numel(); ++i) {
        f[i] = rng.normal();
        g[i] = rng.uniform(0.0, 1.0);
    }
    MaskedFeature m = gradient_mask(f, g, 80.0);
    REQUIRE(m.values.shape() == f.shape());
    REQUIRE(m.mask.shape() == f.shape());
    CHECK(m.percentile == 80.0);
    const double thr = percentile_threshold(g, 80.0);
    for (int64_t i = 0; i < f.numel(); ++i) {
        CHECK(m.mask[i] == (g[i] >= thr ? 1.0 : 0.0));
        CHECK(m.values[i] == f[i] * m.mask[i]);
    }
}

TEST_CASE("retained count matches a sort-based oracle on distinct values") {
    Rng rng(17);
    for (int rep = 0; rep < 50; ++rep) {
        const int64_t n = 64;
        Tensor f({n}), g({n});
        for (int64_t i = 0; i < n; ++i) {
            f[i] = rng.normal();
            g[i] = rng.uniform(0.0, 100.0) + i * 1e-7;  // force distinctness
        }
        const double p = rng.uniform(0.0, 100.0);
        MaskedFeature m = gradient_mask(f, g, p);

        std::vector<double> sorted(g.data(), g.data() + n);
        std::sort(sorted.begin(), sorted.end());
        const double thr = percentile_threshold(g, p);
        const int64_t expect = static_cast<int64_t>(
            sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), thr));
        CHECK(retained(m) == expect);
    }
}

TEST_CASE("masking is idempotent for a fixed guidance map") {
    Rng rng(19);
    Tensor f({4, 8, 8}), g({4, 8, 8});
    for (int64_t i = 0; i < f.numel(); ++i) {
        f[i] = rng.normal();
        g[i] = rng.uniform(0.0, 1.0);
    }
    MaskedFeature once = gradient_mask(f, g, 70.0);
    MaskedFeature twice = gradient_mask(once.values, g, 70.0);
    for (int64_t i = 0; i < f.numel(); ++i) CHECK(twice.values[i] == once.values[i]);
}

TEST_CASE("raising p never resurrects a dropped element") {
    Rng rng(23);
    Tensor f({128}), g({128});
    for (int64_t i = 0; i < 128; ++i) {
        f[i] = rng.normal();
        g[i] = rng.normal();
    }
    MaskedFeature prev = gradient_mask(f, g, 0.0);
    for (double p : {10.0, 35.0, 60.0, 85.0, 95.0, 100.0}) {
        MaskedFeature cur = gradient_mask(f, g, p);
        for (int64_t i = 0; i < 128; ++i)
            if (cur.mask[i] == 1.0) CHECK(prev.mask[i] == 1.0);
        prev = cur;
    }
}

TEST_CASE("mask depends only on the ordering of the guidance map") {
    Rng rng(29);
    Tensor f({64}), g({64});
    for (int64_t i = 0; i < 64; ++i) {
        f[i] = rng.normal();
        g[i] = rng.uniform(-2.0, 2.0);
    }
    Tensor warped({64});
    for (int64_t i = 0; i < 64; ++i) warped[i] = 3.0 * std::atan(g[i]) + 7.0;
    for (double p : {15.0, 50.0, 92.5}) {
        MaskedFeature a = gradient_mask(f, g, p);
        MaskedFeature b = gradient_mask(f, warped, p);
        for (int64_t i = 0; i < 64; ++i) CHECK(a.mask[i] == b.mask[i]);
    }
}

TEST_CASE("zeros in the source stay zero under any mask") {
    Tensor f = vec({0, 1, 0, 2, 0, 3});
    Tensor g = vec({9, 1, 8, 2, 7, 3});
    for (double p : {0.0, 40.0, 90.0}) {
        MaskedFeature m = gradient_mask(f, g, p);
        CHECK(m.values[0] * m.values[2] * m.values[4] == 0.0);
        for (int64_t i : {int64_t{0}, int64_t{2}, int64_t{4}})
            CHECK(m.values[i] == 0.0);
    }
}

TEST_CASE("per-channel masking thresholds each channel on its own") {
    // Channel 0 has uniformly tiny gradients; a global threshold would wipe
    // it out, a per-channel one keeps its own top slice.
    Tensor f({2, 4, 4});
    Tensor g({2, 4, 4});
    for (int64_t i = 0; i < 16; ++i) {
        f[i] = 1.0;
        f[16 + i] = 1.0;
        g[i] = 0.001 + 0.0001 * static_cast<double>(i);
        g[16 + i] = 10.0 + static_cast<double>(i);
    }
    MaskedFeature global = gradient_mask(f, g, 50.0);
    int64_t kept_ch0_global = 0;
    for (int64_t i = 0; i < 16; ++i) kept_ch0_global += global.mask[i] > 0.5;
    CHECK(kept_ch0_global == 0);

    MaskedFeature per = gradient_mask(f, g, 50.0, true);
    int64_t kept_ch0 = 0, kept_ch1 = 0;
    for (int64_t i = 0; i < 16; ++i) {
        kept_ch0 += per.mask[i] > 0.5;
        kept_ch1 += per.mask[16 + i] > 0.5;
    }
    CHECK(kept_ch0 == kept_ch1);
    CHECK(kept_ch0 > 0);
}

TEST_CASE("gradient mask validates its inputs") {
    Tensor f({2, 3});
    Tensor g({3, 2});
    CHECK_THROWS_AS(gradient_mask(f, g, 50.0), std::invalid_argument);
    Tensor g2({2, 3});
    CHECK_THROWS_AS(gradient_mask(f, g2, -1.0), std::domain_error);
    CHECK_THROWS_AS(gradient_mask(f, g2, 101.0), std::domain_error);
}

TEST_CASE("training percentile is uniform on [70,100]") {
    Rng rng(1234);
    double sum = 0.0;
    double lo = 1e9, hi = -1e9;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double p = sample_training_percentile(rng);
        CHECK(p >= 70.0);
        CHECK(p <= 100.0);
        sum += p;
        lo = std::min(lo, p);
        hi = std::max(hi, p);
    }
    CHECK(std::fabs(sum / n - 85.0) < 0.1);
    CHECK(lo < 70.5);   // the edges actually get visited
    CHECK(hi > 99.5);
}

TEST_CASE("training percentile stream is reproducible per seed") {
    Rng a(99), b(99), c(100);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 64; ++i) {
        const double pa = sample_training_percentile(a);
        const double pb = sample_training_percentile(b);
        const double pc = sample_training_percentile(c);
        all_equal = all_equal && pa == pb;
        any_diff = any_diff || pa != pc;
    }
    CHECK(all_equal);
    CHECK(any_diff);
}
