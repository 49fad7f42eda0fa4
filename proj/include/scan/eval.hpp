#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "scan/dataset.hpp"
#include "scan/models.hpp"
#include "scan/tensor.hpp"

namespace scan {

enum class RemovalOrder { most_first, least_first };
enum class FillMode { zero, dataset_mean };

FillMode fill_mode_from_name(const std::string& s);

struct PerturbationCurve {
    std::vector<double> fractions;
    std::vector<double> accuracy;
    std::string order;
};

struct EvalReport {
    std::string method;
    double drop_pct = 0.0;
    double inc_pct = 0.0;
    double win_pct = 0.0;  // 100 when a method is evaluated standalone
    double pos_auc = 0.0;
    double neg_auc = 0.0;
    double auc_d = 0.0;
    int64_t n_samples = 0;
    PerturbationCurve pos_curve;
    PerturbationCurve neg_curve;
    std::vector<double> per_sample_drop;
    std::vector<double> per_sample_pos_auc;
    std::vector<double> per_sample_neg_auc;
};

struct EvalOptions {
    std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<double> fill{0.0, 0.0, 0.0};  // per channel, post-normalization
    int64_t batch_size = 32;
};

// Soft multiplicative masking. images raw [N,3,s,s]; one saliency [s,s] in
// [0,1] per image; classes scored via softmax confidence.
std::pair<double, double> masked_confidence_metrics(
    TargetModel& model, const Tensor& images, const std::vector<Tensor>& saliencies,
    const std::vector<int64_t>& classes, const EvalOptions& opt = {},
    std::vector<double>* per_sample_drop = nullptr);

// Strictly-smallest per-sample drop wins; ties split equally. Sums to 100.
std::map<std::string, double> win_metric(
    const std::map<std::string, std::vector<double>>& drops_by_method);

// Sequential pixel removal by saliency rank (prefix sets), top-1 agreement
// with the supplied classes, trapezoidal area normalized by the fraction
// range, as a percentage.
std::pair<double, PerturbationCurve> perturbation_auc(
    TargetModel& model, const Tensor& images, const std::vector<Tensor>& saliencies,
    const std::vector<int64_t>& classes, RemovalOrder order,
    const EvalOptions& opt = {}, std::vector<double>* per_sample_auc = nullptr);

// Drop/Inc plus both perturbation curves; auc_d = neg - pos exactly.
EvalReport evaluate_saliency(TargetModel& model, const Tensor& images,
                             const std::vector<Tensor>& saliencies,
                             const std::vector<int64_t>& classes,
                             const std::string& method_name,
                             const EvalOptions& opt = {});

// n_random uniform maps per image; every image-map pair is one sample.
EvalReport random_saliency_calibration(TargetModel& model, const Tensor& images,
                                       const std::vector<int64_t>& classes,
                                       int64_t n_random = 10, uint64_t seed = 0,
                                       const EvalOptions& opt = {});

enum class SanityMode { weights, labels };

SanityMode sanity_mode_from_name(const std::string& s);
std::string sanity_mode_name(SanityMode m);

// weights: fresh parameters from the init distribution. labels: retrain on
// the same images with a seeded label permutation (needs data). The source
// model is never mutated.
std::unique_ptr<TargetModel> sanity_randomize(const TargetModel& model, SanityMode mode,
                                              uint64_t seed,
                                              const SplitDataset* data = nullptr,
                                              int64_t epochs = 3);

// Final-conv activations weighted by pooled gradients; CNN targets only.
Tensor gradcam_lite(TargetModel& model, const Tensor& image, int64_t class_idx);

// One-sided bootstrap over per-sample AUC-D: P(mean <= 0).
double bootstrap_p_auc_d(const std::vector<double>& pos_auc,
                         const std::vector<double>& neg_auc, int64_t n_boot,
                         uint64_t seed);

}  // namespace scan
