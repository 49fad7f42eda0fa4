#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "scan/core_math.hpp"
#include "scan/rng.hpp"
#include "scan/tensor.hpp"

using namespace scan;
using namespace scan::core_math;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Independent reimplementation of the full objective, written as plainly as
// possible so the fast path has something to disagree with.
LossTerms brute_force_loss(const Tensor& out, const ReconTarget& target,
                           double alpha, double lambda) {
    const int64_t h = out.dim(1), w = out.dim(2);
    LossTerms lt;
    lt.area_target = 1.0 / (1.0 + alpha);

    std::vector<double> conf(static_cast<size_t>(h * w));
    double c_sum = 0.0;
    for (int64_t i = 0; i < h * w; ++i) {
        const double y = out[3 * h * w + i];
        const double a = std::fabs(y);
        const double s = y > 0 ? 1.0 : (y < 0 ? -1.0 : 0.0);
        conf[static_cast<size_t>(i)] =
            (s * std::sin(2.0 * M_PI * a / (8.0 + 0.15 * a)) + 1.0) / 2.0;
        c_sum += conf[static_cast<size_t>(i)];
    }
    lt.c_mean = c_sum / static_cast<double>(h * w);

    const double eps = 1e-6;
    const double c = std::min(1.0 - eps, std::max(eps, lt.c_mean));
    lt.omega = (c - lt.area_target) * (c - lt.area_target) / (c * (1.0 - c));

    double mse = 0.0;
    double weighted = 0.0;
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t i = 0; i < h * w; ++i) {
            const double e = target.image[ch * h * w + i] - out[ch * h * w + i];
            mse += e * e;
            const double ci = conf[static_cast<size_t>(i)];
            weighted += (alpha * ci + 1.0 - ci) * e * e;
        }
    mse /= static_cast<double>(3 * h * w);
    weighted /= static_cast<double>(3 * h * w);

    lt.conf_loss = (1.0 + lt.omega) * (mse + lambda) - lambda;
    lt.recon_loss = weighted;
    lt.total = lt.conf_loss + lt.recon_loss;
    return lt;
}

}  // namespace

TEST_CASE("confidence activation matches closed form at pinned points") {
    CHECK(confidence_scalar(0.0) == 0.5);
    const double expect2 = (std::sin(4.0 * M_PI / 8.3) + 1.0) / 2.0;
    CHECK(confidence_scalar(2.0) == doctest::Approx(expect2).epsilon(1e-15));
    CHECK(confidence_scalar(-2.0) == doctest::Approx(1.0 - expect2).epsilon(1e-15));
}

TEST_CASE("confidence activation stays in [0,1] on a log grid") {
    // |y| from 1e-9 to 1e9, both signs, plus zero.
    for (int i = 0; i <= 20000; ++i) {
        const double mag = std::pow(10.0, -9.0 + 18.0 * i / 20000.0);
        for (double y : {mag, -mag}) {
            const double c = confidence_scalar(y);
            CHECK(c >= 0.0);
            CHECK(c <= 1.0);
        }
    }
    CHECK(confidence_scalar(0.0) == 0.5);
}

TEST_CASE("confidence activation pivots around 1/2: f(-y) = 1 - f(y)") {
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        const double y = rng.uniform(-1e6, 1e6);
        CHECK(std::fabs(confidence_scalar(-y) - (1.0 - confidence_scalar(y))) < 1e-12);
    }
}

TEST_CASE("confidence map keeps shape and reports the arithmetic mean") {
    Rng rng(3);
    Tensor y = random_tensor({5, 7}, rng, -20.0, 20.0);
    SelfConfidenceMap m = confidence_activation(y);
    REQUIRE(m.values.shape() == std::vector<int64_t>{5, 7});
    double s = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) {
        CHECK(m.values[i] == confidence_scalar(y[i]));
        s += m.values[i];
    }
    CHECK(m.mean == doctest::Approx(s / 35.0).epsilon(1e-15));
}

TEST_CASE("confidence activation rejects non-finite input") {
    Tensor y({2, 2});
    y[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(confidence_activation(y), std::domain_error);
    y[1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(confidence_activation(y), std::domain_error);
}

TEST_CASE("scalar confidence gradient agrees with central differences") {
    Rng rng(17);
    const double h = 1e-6;
    int checked = 0;
    while (checked < 500) {
        const double y = rng.uniform(-50.0, 50.0);
        if (std::fabs(y) < 1e-3) continue;  // kink of sign(y) at the origin
        const double fd = (confidence_scalar(y + h) - confidence_scalar(y - h)) / (2 * h);
        const double an = confidence_scalar_grad(y);
        CHECK(std::fabs(an - fd) < 1e-6 * std::max(1.0, std::fabs(an)));
        ++checked;
    }
}

TEST_CASE("area target is 1/(1+alpha)") {
    CHECK(area_target(4.0) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(area_target(1.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(area_target(16.0) == doctest::Approx(1.0 / 17.0).epsilon(1e-15));
    CHECK_THROWS_AS(area_target(0.0), std::domain_error);
    CHECK_THROWS_AS(area_target(-2.0), std::domain_error);
}

TEST_CASE("area penalty at pinned points") {
    CHECK(area_penalty(0.2, 0.2) == 0.0);
    CHECK(area_penalty(0.5, 0.2) == doctest::Approx(0.36).epsilon(1e-12));
    CHECK(area_penalty(0.8, 0.2) == doctest::Approx(2.25).epsilon(1e-12));
}

TEST_CASE("area penalty is nonnegative and zero only on the target") {
    for (int ci = 1; ci < 100; ++ci)
        for (int ai = 1; ai < 100; ++ai) {
            const double c = ci / 100.0, a = ai / 100.0;
            const double w = area_penalty(c, a);
            CHECK(w >= 0.0);
            if (std::fabs(c - a) > 1e-9)
                CHECK(w > 0.0);
            else
                CHECK(w == 0.0);
        }
}

TEST_CASE("area penalty gradient matches central differences") {
    Rng rng(5);
    const double h = 1e-7;
    for (int i = 0; i < 200; ++i) {
        const double c = rng.uniform(0.01, 0.99);
        const double a = rng.uniform(0.05, 0.95);
        const double fd = (area_penalty(c + h, a) - area_penalty(c - h, a)) / (2 * h);
        CHECK(std::fabs(area_penalty_grad(c, a) - fd) <
              1e-5 * std::max(1.0, std::fabs(fd)));
    }
}

TEST_CASE("blur geometry follows k = 2*floor(s_k/s_f)+1, sigma = s_k/(2 s_f)") {
    int64_t k = 0;
    double sigma = 0.0;
    blur_params(224, 14, k, sigma);
    CHECK(k == 33);
    CHECK(sigma == 8.0);
    blur_params(224, 7, k, sigma);
    CHECK(k == 65);
    CHECK(sigma == 16.0);
    blur_params(32, 4, k, sigma);
    CHECK(k == 17);
    CHECK(sigma == 4.0);
    CHECK_THROWS_AS(blur_params(14, 224, k, sigma), std::domain_error);
}

TEST_CASE("blurring a constant image is the identity") {
    Tensor img = Tensor::full({3, 32, 32}, 0.37);
    ReconTarget t = blur_target(img, 4);
    CHECK(t.kernel_size == 17);
    CHECK(t.sigma == 4.0);
    for (int64_t i = 0; i < t.image.numel(); ++i)
        CHECK(std::fabs(t.image[i] - 0.37) < 1e-12);
}

TEST_CASE("blur output stays inside the input range") {
    Rng rng(23);
    Tensor img = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
    double lo = 1.0, hi = 0.0;
    for (int64_t i = 0; i < img.numel(); ++i) {
        lo = std::min(lo, img[i]);
        hi = std::max(hi, img[i]);
    }
    ReconTarget t = blur_target(img, 4);
    for (int64_t i = 0; i < t.image.numel(); ++i) {
        CHECK(t.image[i] >= lo - 1e-12);
        CHECK(t.image[i] <= hi + 1e-12);
    }
}

TEST_CASE("confidence loss at pinned operating points") {
    Tensor img = Tensor::full({3, 8, 8}, 0.4);
    ReconTarget target;
    target.image = img;

    // Perfect reconstruction, c on target: only the lambda bookkeeping is left.
    Tensor recon = img;
    CHECK(confidence_loss(recon, target, 0.2, 4.0, 0.1) ==
          doctest::Approx(0.0).epsilon(1e-15));

    // Perfect reconstruction, c = 0.5 against A = 0.2: omega = 0.36,
    // loss = 1.36 * 0.1 - 0.1 = 0.036.
    CHECK(confidence_loss(recon, target, 0.5, 4.0, 0.1) ==
          doctest::Approx(0.036).epsilon(1e-12));

    // mse = 0.25 with omega = 0 reduces to plain mse.
    Tensor off = Tensor::full({3, 8, 8}, 0.9);
    CHECK(confidence_loss(off, target, 0.2, 4.0, 0.1) ==
          doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("reconstruction loss interpolates between mse and alpha*mse") {
    Rng rng(31);
    Tensor img = random_tensor({3, 6, 6}, rng, 0.0, 1.0);
    Tensor recon = random_tensor({3, 6, 6}, rng, 0.0, 1.0);
    ReconTarget target;
    target.image = img;

    double mse = 0.0;
    for (int64_t i = 0; i < img.numel(); ++i) {
        const double e = img[i] - recon[i];
        mse += e * e;
    }
    mse /= static_cast<double>(img.numel());

    SelfConfidenceMap conf;
    conf.values = Tensor::full({6, 6}, 0.0);
    conf.mean = 0.0;
    CHECK(reconstruction_loss(recon, target, conf, 4.0) ==
          doctest::Approx(mse).epsilon(1e-12));

    conf.values = Tensor::full({6, 6}, 1.0);
    conf.mean = 1.0;
    CHECK(reconstruction_loss(recon, target, conf, 4.0) ==
          doctest::Approx(4.0 * mse).epsilon(1e-12));
}

TEST_CASE("raising any single confidence entry raises the weighted loss") {
    Rng rng(37);
    Tensor img = random_tensor({3, 4, 4}, rng, 0.0, 1.0);
    Tensor recon = random_tensor({3, 4, 4}, rng, 0.0, 1.0);
    ReconTarget target;
    target.image = img;
    SelfConfidenceMap conf;
    conf.values = Tensor::full({4, 4}, 0.3);

    const double base = reconstruction_loss(recon, target, conf, 4.0);
    for (int64_t i = 0; i < 16; ++i) {
        SelfConfidenceMap bumped = conf;
        bumped.values[i] = 0.8;
        CHECK(reconstruction_loss(recon, target, bumped, 4.0) > base);
    }
}

TEST_CASE("total loss agrees with a brute-force evaluation") {
    Rng rng(41);
    for (int rep = 0; rep < 25; ++rep) {
        Tensor out = random_tensor({4, 8, 8}, rng, -3.0, 3.0);
        ReconTarget target;
        target.image = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
        const double alpha = rng.uniform(0.5, 8.0);
        const double lambda = rng.uniform(0.01, 0.5);

        LossTerms fast = total_loss(out, target, alpha, lambda);
        LossTerms slow = brute_force_loss(out, target, alpha, lambda);
        CHECK(fast.c_mean == doctest::Approx(slow.c_mean).epsilon(1e-12));
        CHECK(fast.omega == doctest::Approx(slow.omega).epsilon(1e-10));
        CHECK(fast.conf_loss == doctest::Approx(slow.conf_loss).epsilon(1e-10));
        CHECK(fast.recon_loss == doctest::Approx(slow.recon_loss).epsilon(1e-10));
        CHECK(fast.total == doctest::Approx(slow.total).epsilon(1e-10));
        CHECK(fast.total == fast.conf_loss + fast.recon_loss);
    }
}

TEST_CASE("all-zero decoder output against a zero target costs omega*lambda") {
    Tensor out({4, 8, 8});
    ReconTarget target;
    target.image = Tensor({3, 8, 8});
    const double alpha = 4.0, lambda = 0.1;
    LossTerms lt = total_loss(out, target, alpha, lambda);
    CHECK(lt.c_mean == doctest::Approx(0.5).epsilon(1e-12));
    const double omega = area_penalty(0.5, area_target(alpha));
    CHECK(lt.total == doctest::Approx(omega * lambda).epsilon(1e-12));
    CHECK(lt.recon_loss == doctest::Approx(0.0).scale(1).epsilon(1e-12));
}

TEST_CASE("loss vanishes at the intended optimum") {
    // Find the pre-activation value whose confidence equals A_c = 0.2, then
    // hand the loss a perfect reconstruction at exactly that confidence.
    double lo = -4.0, hi = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = (lo + hi) / 2;
        (confidence_scalar(mid) < 0.2 ? lo : hi) = mid;
    }
    const double y_star = (lo + hi) / 2;
    REQUIRE(std::fabs(confidence_scalar(y_star) - 0.2) < 1e-12);

    Rng rng(43);
    Tensor img = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
    ReconTarget target;
    target.image = img;
    Tensor out({4, 8, 8});
    for (int64_t i = 0; i < img.numel(); ++i) out[i] = img[i];
    for (int64_t i = 0; i < 64; ++i) out[3 * 64 + i] = y_star;

    LossTerms lt = total_loss(out, target, 4.0, 0.1);
    CHECK(std::fabs(lt.total) < 1e-12);
}

TEST_CASE("analytic gradient of the total loss matches central differences") {
    Rng rng(47);
    const double h = 1e-5;
    for (int rep = 0; rep < 3; ++rep) {
        Tensor out({4, 4, 4});
        for (int64_t i = 0; i < out.numel(); ++i) {
            double v = rng.normal();
            while (i >= 48 && std::fabs(v) < 1e-3) v = rng.normal();
            out[i] = v;
        }
        ReconTarget target;
        target.image = random_tensor({3, 4, 4}, rng, 0.0, 1.0);

        Tensor grad;
        total_loss_with_grad(out, target, 4.0, 0.1, ConfVariant::sine, grad);
        REQUIRE(grad.shape() == out.shape());

        for (int64_t i = 0; i < out.numel(); ++i) {
            Tensor plus = out, minus = out;
            plus[i] += h;
            minus[i] -= h;
            const double fd = (total_loss(plus, target, 4.0, 0.1).total -
                               total_loss(minus, target, 4.0, 0.1).total) /
                              (2 * h);
            const double denom = std::max({std::fabs(grad[i]), std::fabs(fd), 1e-6});
            CHECK(std::fabs(grad[i] - fd) / denom < 1e-4);
        }
    }
}

TEST_CASE("sigmoid variant is monotone and reuses the same loss plumbing") {
    CHECK(confidence_scalar(0.0, ConfVariant::sigmoid) == doctest::Approx(0.5));
    CHECK(confidence_scalar(10.0, ConfVariant::sigmoid) > 0.99);
    CHECK(confidence_scalar(-10.0, ConfVariant::sigmoid) < 0.01);
    double prev = -1.0;
    for (double y = -8.0; y <= 8.0; y += 0.25) {
        const double c = confidence_scalar(y, ConfVariant::sigmoid);
        CHECK(c > prev);
        prev = c;
    }

    Rng rng(53);
    Tensor out = random_tensor({4, 4, 4}, rng, -2.0, 2.0);
    ReconTarget target;
    target.image = random_tensor({3, 4, 4}, rng, 0.0, 1.0);
    Tensor grad;
    LossTerms lt =
        total_loss_with_grad(out, target, 4.0, 0.1, ConfVariant::sigmoid, grad);
    CHECK(std::isfinite(lt.total));
    const double h = 1e-5;
    for (int64_t i : {int64_t{0}, int64_t{20}, int64_t{50}, int64_t{60}}) {
        Tensor plus = out, minus = out;
        plus[i] += h;
        minus[i] -= h;
        const double fd =
            (total_loss(plus, target, 4.0, 0.1, ConfVariant::sigmoid).total -
             total_loss(minus, target, 4.0, 0.1, ConfVariant::sigmoid).total) /
            (2 * h);
        CHECK(std::fabs(grad[i] - fd) < 1e-4 * std::max(1.0, std::fabs(fd)));
    }
}

TEST_CASE("loss rejects malformed inputs") {
    Tensor out({4, 8, 8});
    ReconTarget target;
    target.image = Tensor({3, 8, 8});
    CHECK_THROWS_AS(total_loss(out, target, -1.0, 0.1), std::domain_error);
    ReconTarget bad;
    bad.image = Tensor({3, 4, 4});
    CHECK_THROWS_AS(total_loss(out, bad, 4.0, 0.1), std::invalid_argument);
    Tensor nan_out = out;
    nan_out[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(total_loss(nan_out, target, 4.0, 0.1), std::domain_error);
}
