#pragma once

#include <cstdint>

#include "scan/tensor.hpp"

namespace scan::core_math {

/// Which activation squashes the raw confidence channel into [0,1].
/// `sigmoid` exists only for the component-ablation run.
enum class ConfVariant { sine, sigmoid };

struct SelfConfidenceMap {
    Tensor values;  // [H,W], each element in [0,1]
    double mean = 0.0;
};

struct ReconTarget {
    Tensor image;  // [3,H,W] in [0,1]
    int64_t kernel_size = 0;
    double sigma = 0.0;
};

struct LossTerms {
    double conf_loss = 0.0;
    double recon_loss = 0.0;
    double total = 0.0;
    double omega = 0.0;
    double area_target = 0.0;
    double c_mean = 0.0;
};

// Stretching-sine activation, elementwise:
//   C = (sign(y) * sin(2*pi*|y| / (8 + 0.15*|y|)) + 1) / 2
// sign(0) is taken as 0, so C(0) = 1/2. Bounded in [0,1] for all finite y.
double confidence_scalar(double y_c, ConfVariant variant = ConfVariant::sine);
// dC/dy; 0 at exactly y = 0 for the sine variant (subgradient choice).
double confidence_scalar_grad(double y_c, ConfVariant variant = ConfVariant::sine);

// Rejects non-finite input. y_c is any-rank; output keeps the shape [H,W].
SelfConfidenceMap confidence_activation(const Tensor& y_c,
                                        ConfVariant variant = ConfVariant::sine);

// A_c = 1 / (1 + alpha); alpha must be positive.
double area_target(double alpha);

// omega = (c - A)^2 / (c * (1 - c)) with c clamped into [eps, 1-eps].
double area_penalty(double c_mean, double area_target_value);
double area_penalty_grad(double c_mean, double area_target_value);

// Blur geometry: k = 2*floor(s_k/s_f) + 1, sigma = s_k / (2*s_f).
void blur_params(int64_t image_side, int64_t feature_side, int64_t& kernel_size,
                 double& sigma);

// Gaussian-blurred reconstruction target, reflect padding.
ReconTarget blur_target(const Tensor& image, int64_t feature_side);

// Loss_c = (1 + omega) * (mse + lambda) - lambda, mse = mean squared error
// over all 3*H*W elements.
double confidence_loss(const Tensor& recon, const ReconTarget& target,
                       double c_mean, double alpha, double lambda);

// Loss_r = (1/N) * sum_i (alpha*C_i + 1 - C_i) * (target_i - recon_i)^2 with
// the confidence map broadcast across the three color channels.
double reconstruction_loss(const Tensor& recon, const ReconTarget& target,
                           const SelfConfidenceMap& conf, double alpha);

// Full objective on one decoder output [4,H,W]: channels 1-3 are the
// reconstruction, channel 4 the confidence pre-activation.
LossTerms total_loss(const Tensor& decoder_out, const ReconTarget& target,
                     double alpha, double lambda,
                     ConfVariant variant = ConfVariant::sine);

// Same, also writing d(total)/d(decoder_out) into grad (shape [4,H,W]).
LossTerms total_loss_with_grad(const Tensor& decoder_out, const ReconTarget& target,
                               double alpha, double lambda, ConfVariant variant,
                               Tensor& grad);

}  // namespace scan::core_math
