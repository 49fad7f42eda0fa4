#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "scan/dataset.hpp"
#include "scan/errors.hpp"
#include "scan/eval.hpp"
#include "scan/models.hpp"
#include "scan/rng.hpp"

using namespace scan;

namespace {

struct Fixture {
    SplitDataset data;
    std::unique_ptr<TargetModel> target;
    std::vector<int64_t> val_pred;

    Fixture() {
        ShapesSpec spec;
        spec.n_train = 48;
        spec.n_val = 12;
        spec.image_side = 16;
        spec.seed = 3;
        data = make_shapes_dataset(spec);

        TargetConfig tcfg;
        tcfg.image_side = 16;
        tcfg.cnn_width = 8;
        TargetTrainOptions topt;
        topt.epochs = 2;
        topt.seed = 5;
        target = train_toy_targets(data, tcfg, topt).model;
        val_pred = predict_classes(*target, data.val.images);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

std::vector<Tensor> random_maps(int64_t n, int64_t side, uint64_t seed,
                                bool distinct = false) {
    Rng rng(seed);
    std::vector<Tensor> out;
    for (int64_t k = 0; k < n; ++k) {
        Tensor m({side, side});
        for (int64_t i = 0; i < m.numel(); ++i)
            m[i] = distinct ? (rng.uniform(0.0, 1.0) + 1e-9 * static_cast<double>(i))
                            : rng.uniform(0.0, 1.0);
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace

TEST_CASE("fill mode names") {
    CHECK(fill_mode_from_name("zero") == FillMode::zero);
    CHECK(fill_mode_from_name("mean") == FillMode::dataset_mean);
    CHECK(fill_mode_from_name("dataset_mean") == FillMode::dataset_mean);
    CHECK_THROWS_AS(fill_mode_from_name("blur"), ConfigError);
}

TEST_CASE("win metric splits ties and always sums to 100") {
    std::map<std::string, std::vector<double>> drops;
    drops["a"] = {1.0, 2.0, 5.0};
    drops["b"] = {2.0, 1.0, 5.0};
    drops["c"] = {3.0, 3.0, 5.0};
    auto win = win_metric(drops);
    double total = 0.0;
    for (auto& [k, v] : win) total += v;
    CHECK(total == doctest::Approx(100.0).epsilon(1e-12));
    // a and b win one sample each; the third is a three-way tie.
    CHECK(win["a"] == doctest::Approx((100.0 / 3.0) * (1.0 + 1.0 / 3.0)).epsilon(1e-9));
    CHECK(win["b"] == win["a"]);
    CHECK(win["c"] == doctest::Approx((100.0 / 3.0) / 3.0).epsilon(1e-9));
}

TEST_CASE("all-ones saliency keeps the soft-masked image intact") {
    auto& f = fixture();
    std::vector<Tensor> ones;
    for (int64_t i = 0; i < f.data.val.size(); ++i) {
        Tensor m({16, 16});
        for (int64_t j = 0; j < m.numel(); ++j) m[j] = 1.0;
        ones.push_back(std::move(m));
    }
    auto [drop, inc] =
        masked_confidence_metrics(*f.target, f.data.val.images, ones, f.val_pred);
    CHECK(drop == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(inc == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("removing nothing keeps agreement at 100 percent") {
    auto& f = fixture();
    auto maps = random_maps(f.data.val.size(), 16, 21);
    EvalOptions opt;
    opt.fractions = {0.0};
    auto [auc, curve] = perturbation_auc(*f.target, f.data.val.images, maps,
                                         f.val_pred, RemovalOrder::most_first, opt);
    REQUIRE(curve.accuracy.size() == 1);
    // Classes are the model's own predictions, so the unperturbed pass agrees.
    CHECK(curve.accuracy[0] == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("prefix removal makes accuracy independent of the preceding grid") {
    auto& f = fixture();
    auto maps = random_maps(f.data.val.size(), 16, 22, true);
    EvalOptions coarse, fine;
    coarse.fractions = {0.5};
    fine.fractions = {0.1, 0.3, 0.5};
    auto [a1, c1] = perturbation_auc(*f.target, f.data.val.images, maps, f.val_pred,
                                     RemovalOrder::most_first, coarse);
    auto [a2, c2] = perturbation_auc(*f.target, f.data.val.images, maps, f.val_pred,
                                     RemovalOrder::most_first, fine);
    CHECK(c1.accuracy[0] == doctest::Approx(c2.accuracy[2]).epsilon(1e-12));
}

TEST_CASE("negating a distinct saliency swaps the removal orders") {
    auto& f = fixture();
    auto maps = random_maps(f.data.val.size(), 16, 23, true);
    std::vector<Tensor> neg;
    for (const auto& m : maps) {
        Tensor t({16, 16});
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = 1.0 - m[i];
        neg.push_back(std::move(t));
    }
    EvalOptions opt;
    auto [pos, pc] = perturbation_auc(*f.target, f.data.val.images, maps, f.val_pred,
                                      RemovalOrder::most_first, opt);
    auto [flip, fc] = perturbation_auc(*f.target, f.data.val.images, neg, f.val_pred,
                                       RemovalOrder::least_first, opt);
    CHECK(pos == doctest::Approx(flip).epsilon(1e-12));
    for (size_t i = 0; i < pc.accuracy.size(); ++i)
        CHECK(pc.accuracy[i] == doctest::Approx(fc.accuracy[i]).epsilon(1e-12));
}

TEST_CASE("report ties the summary numbers to its own parts") {
    auto& f = fixture();
    auto maps = random_maps(f.data.val.size(), 16, 24);
    EvalReport r = evaluate_saliency(*f.target, f.data.val.images, maps, f.val_pred,
                                     "probe");
    CHECK(r.method == "probe");
    CHECK(r.n_samples == f.data.val.size());
    CHECK(r.auc_d == r.neg_auc - r.pos_auc);
    CHECK(r.win_pct == 100.0);
    REQUIRE(r.per_sample_pos_auc.size() == static_cast<size_t>(r.n_samples));
    REQUIRE(r.per_sample_neg_auc.size() == static_cast<size_t>(r.n_samples));
    double pos = 0.0, neg = 0.0;
    for (int64_t i = 0; i < r.n_samples; ++i) {
        pos += r.per_sample_pos_auc[i];
        neg += r.per_sample_neg_auc[i];
    }
    CHECK(r.pos_auc == doctest::Approx(pos / r.n_samples).epsilon(1e-9));
    CHECK(r.neg_auc == doctest::Approx(neg / r.n_samples).epsilon(1e-9));
    CHECK(r.pos_curve.order == "most_first");
    CHECK(r.neg_curve.order == "least_first");
}

TEST_CASE("random calibration is seeded and near zero") {
    auto& f = fixture();
    EvalReport a = random_saliency_calibration(*f.target, f.data.val.images,
                                               f.val_pred, 4, 77);
    EvalReport b = random_saliency_calibration(*f.target, f.data.val.images,
                                               f.val_pred, 4, 77);
    CHECK(a.n_samples == f.data.val.size() * 4);
    CHECK(a.auc_d == b.auc_d);
    CHECK(a.pos_auc == b.pos_auc);
    EvalReport c = random_saliency_calibration(*f.target, f.data.val.images,
                                               f.val_pred, 4, 78);
    CHECK(c.auc_d != a.auc_d);
}

TEST_CASE("bootstrap p-value is deterministic and sides correctly") {
    std::vector<double> pos(40), neg(40);
    for (size_t i = 0; i < pos.size(); ++i) {
        pos[i] = 10.0 + 0.1 * static_cast<double>(i % 5);
        neg[i] = 60.0 + 0.1 * static_cast<double>(i % 7);
    }
    double p1 = bootstrap_p_auc_d(pos, neg, 200, 9);
    double p2 = bootstrap_p_auc_d(pos, neg, 200, 9);
    CHECK(p1 == p2);
    CHECK(p1 <= 1.0 / 201.0 + 1e-15);  // every resample mean is far above zero

    // Antisymmetric samples: the resampled mean straddles zero.
    std::vector<double> z_pos(40), z_neg(40);
    for (size_t i = 0; i < z_pos.size(); ++i) {
        z_pos[i] = 50.0;
        z_neg[i] = (i % 2 == 0) ? 49.0 : 51.0;
    }
    double pz = bootstrap_p_auc_d(z_pos, z_neg, 400, 9);
    CHECK(pz > 0.1);
    CHECK(pz < 0.9);
}

TEST_CASE("sanity modes parse and reject junk") {
    CHECK(sanity_mode_from_name("weights") == SanityMode::weights);
    CHECK(sanity_mode_from_name("labels") == SanityMode::labels);
    CHECK_THROWS_AS(sanity_mode_from_name("none"), ConfigError);
    CHECK(sanity_mode_name(SanityMode::weights) == "weights");
    CHECK(sanity_mode_name(SanityMode::labels) == "labels");
}

TEST_CASE("weight randomization replaces parameters without touching the source") {
    auto& f = fixture();
    std::string before = f.target->weights_sha256();
    auto rnd1 = sanity_randomize(*f.target, SanityMode::weights, 31);
    auto rnd2 = sanity_randomize(*f.target, SanityMode::weights, 31);
    auto rnd3 = sanity_randomize(*f.target, SanityMode::weights, 32);

    CHECK(f.target->weights_sha256() == before);
    CHECK(rnd1->weights_sha256() != before);
    CHECK(rnd1->weights_sha256() == rnd2->weights_sha256());
    CHECK(rnd1->weights_sha256() != rnd3->weights_sha256());
    CHECK(rnd1->frozen());
    CHECK(rnd1->config().image_side == f.target->config().image_side);
}

TEST_CASE("label randomization retrains and needs data") {
    auto& f = fixture();
    CHECK_THROWS_AS(sanity_randomize(*f.target, SanityMode::labels, 31), ConfigError);
    std::string before = f.target->weights_sha256();
    auto rnd = sanity_randomize(*f.target, SanityMode::labels, 31, &f.data, 1);
    CHECK(f.target->weights_sha256() == before);
    CHECK(rnd->weights_sha256() != before);
    CHECK(rnd->frozen());
}

TEST_CASE("gradcam baseline emits a normalized map and rejects vit targets") {
    auto& f = fixture();
    Tensor img = f.data.val.image(0);
    Tensor cam = gradcam_lite(*f.target, img, -1);
    REQUIRE(cam.shape() == std::vector<int64_t>{16, 16});
    double mn = 1e9, mx = -1e9;
    for (int64_t i = 0; i < cam.numel(); ++i) {
        mn = std::min(mn, cam[i]);
        mx = std::max(mx, cam[i]);
    }
    CHECK(mn >= 0.0);
    CHECK(mx <= 1.0);

    TargetConfig vcfg;
    vcfg.arch = Arch::vit;
    vcfg.image_side = 16;
    vcfg.vit_dim = 16;
    vcfg.vit_depth = 1;
    vcfg.vit_heads = 2;
    Rng rng(1);
    TargetModel vit(vcfg, rng);
    CHECK_THROWS_AS(gradcam_lite(vit, img, 0), ConfigError);
}
