#include "scan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "scan/errors.hpp"
#include "scan/kernels.hpp"
#include "scan/rng.hpp"

namespace scan {

FillMode fill_mode_from_name(const std::string& s) {
    if (s == "zero") return FillMode::zero;
    if (s == "mean" || s == "dataset_mean") return FillMode::dataset_mean;
    throw ConfigError("unknown fill mode: " + s);
}

namespace {

void check_eval_inputs(const TargetModel& model, const Tensor& images,
                       const std::vector<Tensor>& saliencies,
                       const std::vector<int64_t>& classes, bool bounded) {
    const int64_t n = images.shape()[0];
    const int64_t s = model.config().image_side;
    if (images.rank() != 4 || images.shape()[2] != s || images.shape()[3] != s)
        throw std::domain_error("image batch does not match model geometry");
    if (static_cast<int64_t>(saliencies.size()) != n ||
        static_cast<int64_t>(classes.size()) != n)
        throw std::domain_error("images, saliencies and classes must align");
    for (const Tensor& sal : saliencies) {
        if (sal.shape() != std::vector<int64_t>{s, s})
            throw std::domain_error("saliency map must be [side, side]");
        if (bounded)
            for (int64_t i = 0; i < sal.numel(); ++i)
                if (!(sal[i] >= 0.0 && sal[i] <= 1.0))
                    throw std::domain_error("saliency values must lie in [0,1]");
    }
}

// Softmax confidence of classes[i] for every image in the (already
// normalized) batch.
std::vector<double> class_confidences(TargetModel& model, const Tensor& norm_images,
                                      const std::vector<int64_t>& classes,
                                      int64_t batch_size) {
    const int64_t n = norm_images.shape()[0];
    const int64_t s = norm_images.shape()[2];
    const int64_t k = model.config().num_classes;
    std::vector<double> out(n);
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t bs = std::min(batch_size, n - start);
        Tensor batch({bs, 3, s, s});
        std::copy(norm_images.data() + start * 3 * s * s,
                  norm_images.data() + (start + bs) * 3 * s * s, batch.data());
        Tensor logits = model.forward(batch);
        Tensor probs({bs, k});
        kernels::softmax_rows(logits, probs);
        for (int64_t i = 0; i < bs; ++i) out[start + i] = probs[i * k + classes[start + i]];
    }
    return out;
}

std::vector<int64_t> argmax_classes(TargetModel& model, const Tensor& norm_images,
                                    int64_t batch_size) {
    const int64_t n = norm_images.shape()[0];
    const int64_t s = norm_images.shape()[2];
    const int64_t k = model.config().num_classes;
    std::vector<int64_t> out(n);
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t bs = std::min(batch_size, n - start);
        Tensor batch({bs, 3, s, s});
        std::copy(norm_images.data() + start * 3 * s * s,
                  norm_images.data() + (start + bs) * 3 * s * s, batch.data());
        Tensor logits = model.forward(batch);
        for (int64_t i = 0; i < bs; ++i) {
            const double* row = logits.data() + i * k;
            out[start + i] = std::max_element(row, row + k) - row;
        }
    }
    return out;
}

}  // namespace

std::pair<double, double> masked_confidence_metrics(
    TargetModel& model, const Tensor& images, const std::vector<Tensor>& saliencies,
    const std::vector<int64_t>& classes, const EvalOptions& opt,
    std::vector<double>* per_sample_drop) {
    check_eval_inputs(model, images, saliencies, classes, true);
    const int64_t n = images.shape()[0];
    const int64_t s = images.shape()[2];
    const int64_t hw = s * s;
    Tensor norm = model.normalize(images);
    const auto y = class_confidences(model, norm, classes, opt.batch_size);

    Tensor masked(norm.shape());
    for (int64_t i = 0; i < n; ++i) {
        const double* sal = saliencies[static_cast<size_t>(i)].data();
        for (int64_t c = 0; c < 3; ++c) {
            const double* src = norm.data() + (i * 3 + c) * hw;
            double* dst = masked.data() + (i * 3 + c) * hw;
            for (int64_t j = 0; j < hw; ++j) dst[j] = src[j] * sal[j];
        }
    }
    const auto o = class_confidences(model, masked, classes, opt.batch_size);

    if (per_sample_drop != nullptr) per_sample_drop->assign(n, 0.0);
    double drop = 0.0;
    int64_t inc = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = std::max(0.0, y[i] - o[i]) / y[i];
        drop += d;
        if (per_sample_drop != nullptr) (*per_sample_drop)[i] = 100.0 * d;
        if (o[i] > y[i]) ++inc;
    }
    return {100.0 * drop / static_cast<double>(n),
            100.0 * static_cast<double>(inc) / static_cast<double>(n)};
}

std::map<std::string, double> win_metric(
    const std::map<std::string, std::vector<double>>& drops_by_method) {
    if (drops_by_method.empty()) throw std::domain_error("no methods to compare");
    const int64_t n = static_cast<int64_t>(drops_by_method.begin()->second.size());
    for (const auto& [name, drops] : drops_by_method)
        if (static_cast<int64_t>(drops.size()) != n)
            throw std::domain_error("method '" + name +
                                    "' evaluated on a different sample set");
    std::map<std::string, double> wins;
    for (const auto& [name, drops] : drops_by_method) wins[name] = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [name, drops] : drops_by_method) best = std::min(best, drops[i]);
        std::vector<const std::string*> winners;
        for (const auto& [name, drops] : drops_by_method)
            if (drops[i] == best) winners.push_back(&name);
        const double share = 1.0 / static_cast<double>(winners.size());
        for (const std::string* w : winners) wins[*w] += share;
    }
    for (auto& [name, w] : wins) w = 100.0 * w / static_cast<double>(n);
    return wins;
}

std::pair<double, PerturbationCurve> perturbation_auc(
    TargetModel& model, const Tensor& images, const std::vector<Tensor>& saliencies,
    const std::vector<int64_t>& classes, RemovalOrder order, const EvalOptions& opt,
    std::vector<double>* per_sample_auc) {
    check_eval_inputs(model, images, saliencies, classes, false);
    if (opt.fractions.empty()) throw std::domain_error("empty fraction grid");
    for (size_t j = 1; j < opt.fractions.size(); ++j)
        if (opt.fractions[j] <= opt.fractions[j - 1])
            throw std::domain_error("fractions must be strictly increasing");
    if (opt.fractions.front() <= 0.0 || opt.fractions.back() >= 1.0)
        throw std::domain_error("fractions must lie in (0,1)");

    const int64_t n = images.shape()[0];
    const int64_t s = images.shape()[2];
    const int64_t hw = s * s;
    Tensor norm = model.normalize(images);

    // Pixel ranking per image: saliency value (descending for most_first),
    // then pixel index, so a map and its negation produce exactly swapped
    // orders.
    std::vector<std::vector<int32_t>> ranking(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        auto& idx = ranking[static_cast<size_t>(i)];
        idx.resize(static_cast<size_t>(hw));
        std::iota(idx.begin(), idx.end(), 0);
        const double* sal = saliencies[static_cast<size_t>(i)].data();
        if (order == RemovalOrder::most_first)
            std::sort(idx.begin(), idx.end(), [sal](int32_t a, int32_t b) {
                return sal[a] != sal[b] ? sal[a] > sal[b] : a < b;
            });
        else
            std::sort(idx.begin(), idx.end(), [sal](int32_t a, int32_t b) {
                return sal[a] != sal[b] ? sal[a] < sal[b] : a < b;
            });
    }

    const size_t nf = opt.fractions.size();
    std::vector<std::vector<double>> agree(static_cast<size_t>(n),
                                           std::vector<double>(nf, 0.0));
    Tensor work = norm;
    int64_t removed = 0;
    for (size_t j = 0; j < nf; ++j) {
        const int64_t m = std::llround(opt.fractions[j] * static_cast<double>(hw));
        // sequential: extend the removed prefix in place
        for (int64_t i = 0; i < n; ++i) {
            const auto& idx = ranking[static_cast<size_t>(i)];
            for (int64_t r = removed; r < m; ++r) {
                const int32_t p = idx[static_cast<size_t>(r)];
                for (int64_t c = 0; c < 3; ++c)
                    work[(i * 3 + c) * hw + p] = opt.fill[static_cast<size_t>(c)];
            }
        }
        removed = m;
        const auto pred = argmax_classes(model, work, opt.batch_size);
        for (int64_t i = 0; i < n; ++i)
            agree[static_cast<size_t>(i)][j] = pred[i] == classes[i] ? 1.0 : 0.0;
    }

    PerturbationCurve curve;
    curve.fractions = opt.fractions;
    curve.order = order == RemovalOrder::most_first ? "most_first" : "least_first";
    curve.accuracy.assign(nf, 0.0);
    for (size_t j = 0; j < nf; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) acc += agree[static_cast<size_t>(i)][j];
        curve.accuracy[j] = acc / static_cast<double>(n);
    }

    const double range = opt.fractions.back() - opt.fractions.front();
    auto trapezoid = [&](const std::vector<double>& a) {
        if (nf == 1) return 100.0 * a[0];
        double area = 0.0;
        for (size_t j = 0; j + 1 < nf; ++j)
            area += (opt.fractions[j + 1] - opt.fractions[j]) * (a[j] + a[j + 1]) / 2.0;
        return 100.0 * area / range;
    };
    if (per_sample_auc != nullptr) {
        per_sample_auc->resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i)
            (*per_sample_auc)[static_cast<size_t>(i)] =
                trapezoid(agree[static_cast<size_t>(i)]);
    }
    double auc = 0.0;
    for (int64_t i = 0; i < n; ++i) auc += trapezoid(agree[static_cast<size_t>(i)]);
    return {auc / static_cast<double>(n), curve};
}

EvalReport evaluate_saliency(TargetModel& model, const Tensor& images,
                             const std::vector<Tensor>& saliencies,
                             const std::vector<int64_t>& classes,
                             const std::string& method_name, const EvalOptions& opt) {
    EvalReport r;
    r.method = method_name;
    r.n_samples = images.shape()[0];
    auto [drop, inc] =
        masked_confidence_metrics(model, images, saliencies, classes, opt,
                                  &r.per_sample_drop);
    r.drop_pct = drop;
    r.inc_pct = inc;
    r.win_pct = 100.0;
    auto [pos, pos_curve] = perturbation_auc(model, images, saliencies, classes,
                                             RemovalOrder::most_first, opt,
                                             &r.per_sample_pos_auc);
    auto [neg, neg_curve] = perturbation_auc(model, images, saliencies, classes,
                                             RemovalOrder::least_first, opt,
                                             &r.per_sample_neg_auc);
    r.pos_auc = pos;
    r.neg_auc = neg;
    r.auc_d = r.neg_auc - r.pos_auc;
    r.pos_curve = std::move(pos_curve);
    r.neg_curve = std::move(neg_curve);
    return r;
}

EvalReport random_saliency_calibration(TargetModel& model, const Tensor& images,
                                       const std::vector<int64_t>& classes,
                                       int64_t n_random, uint64_t seed,
                                       const EvalOptions& opt) {
    if (n_random < 1) throw ConfigError("n_random must be >= 1");
    const int64_t n = images.shape()[0];
    const int64_t s = images.shape()[2];
    const int64_t pairs = n * n_random;
    Tensor rep({pairs, 3, s, s});
    std::vector<int64_t> rep_classes(pairs);
    std::vector<Tensor> maps;
    maps.reserve(static_cast<size_t>(pairs));
    Rng rng(seed);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < n_random; ++k) {
            const int64_t dst = i * n_random + k;
            std::copy(images.data() + i * 3 * s * s, images.data() + (i + 1) * 3 * s * s,
                      rep.data() + dst * 3 * s * s);
            rep_classes[dst] = classes[i];
            Tensor m({s, s});
            for (int64_t j = 0; j < s * s; ++j) m[j] = rng.uniform01();
            maps.push_back(std::move(m));
        }
    return evaluate_saliency(model, rep, maps, rep_classes, "random", opt);
}

SanityMode sanity_mode_from_name(const std::string& s) {
    if (s == "weights") return SanityMode::weights;
    if (s == "labels") return SanityMode::labels;
    throw ConfigError("unknown sanity mode: " + s);
}

std::string sanity_mode_name(SanityMode m) {
    return m == SanityMode::weights ? "weights" : "labels";
}

std::unique_ptr<TargetModel> sanity_randomize(const TargetModel& model, SanityMode mode,
                                              uint64_t seed, const SplitDataset* data,
                                              int64_t epochs) {
    if (mode == SanityMode::weights) {
        Rng rng(seed);
        auto fresh = std::make_unique<TargetModel>(model.config(), rng);
        fresh->norm_mean = model.norm_mean;
        fresh->norm_std = model.norm_std;
        fresh->set_frozen(true);
        fresh->set_seed(seed);
        return fresh;
    }
    if (data == nullptr)
        throw ConfigError("label randomization requires the training dataset");
    SplitDataset shuffled;
    shuffled.train = data->train;
    shuffled.val = data->val;
    Rng rng(seed);
    rng.shuffle(shuffled.train.labels);
    TargetTrainOptions opt;
    opt.epochs = epochs;
    opt.seed = seed;
    auto result = train_toy_targets(shuffled, model.config(), opt);
    result.model->norm_mean = model.norm_mean;
    result.model->norm_std = model.norm_std;
    return std::move(result.model);
}

Tensor gradcam_lite(TargetModel& model, const Tensor& image, int64_t class_idx) {
    if (model.config().arch != Arch::cnn)
        throw ConfigError("gradcam baseline supports cnn targets only");
    const int64_t s = model.config().image_side;
    Tensor batch = model.normalize(image.reshaped({1, 3, s, s}));
    if (class_idx < 0) class_idx = argmax_classes(model, batch, 1)[0];
    auto [feats, grads] = model.feature_gradients(batch, "final_conv", {class_idx});
    const TapInfo info = model.tap_info("final_conv");
    const int64_t c = info.channels, f = info.side;
    Tensor cam({f, f});
    for (int64_t ch = 0; ch < c; ++ch) {
        const double* g = grads.data() + ch * f * f;
        const double* v = feats.data() + ch * f * f;
        double w = 0.0;
        for (int64_t j = 0; j < f * f; ++j) w += g[j];
        w /= static_cast<double>(f * f);
        for (int64_t j = 0; j < f * f; ++j) cam[j] += w * v[j];
    }
    double mx = 0.0, mn = std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < f * f; ++j) {
        cam[j] = std::max(0.0, cam[j]);
        mx = std::max(mx, cam[j]);
        mn = std::min(mn, cam[j]);
    }
    if (mx - mn <= 0.0) return Tensor({s, s});
    for (int64_t j = 0; j < f * f; ++j) cam[j] = (cam[j] - mn) / (mx - mn);
    return kernels::bilinear_upsample(cam, s);
}

double bootstrap_p_auc_d(const std::vector<double>& pos_auc,
                         const std::vector<double>& neg_auc, int64_t n_boot,
                         uint64_t seed) {
    if (pos_auc.size() != neg_auc.size() || pos_auc.empty())
        throw std::domain_error("per-sample AUC vectors must align");
    const size_t n = pos_auc.size();
    std::vector<double> aucd(n);
    for (size_t i = 0; i < n; ++i) aucd[i] = neg_auc[i] - pos_auc[i];
    Rng rng(seed);
    int64_t le_zero = 0;
    for (int64_t b = 0; b < n_boot; ++b) {
        double sum = 0.0;
        for (size_t i = 0; i < n; ++i) sum += aucd[rng.below(n)];
        if (sum / static_cast<double>(n) <= 0.0) ++le_zero;
    }
    return static_cast<double>(le_zero + 1) / static_cast<double>(n_boot + 1);
}

}  // namespace scan
