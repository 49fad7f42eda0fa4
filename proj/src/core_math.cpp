#include "scan/core_math.hpp"

#include <cmath>
#include <stdexcept>

#include "scan/kernels.hpp"

namespace scan::core_math {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kClampEps = 1e-6;

void check_recon_shapes(const Tensor& recon, const ReconTarget& target) {
    if (recon.rank() != 3 || recon.dim(0) != 3)
        throw std::invalid_argument("reconstruction must be [3,H,W]");
    if (!recon.same_shape(target.image))
        throw std::invalid_argument("reconstruction/target shape mismatch: " +
                                    recon.shape_str() + " vs " + target.image.shape_str());
}

double mse(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

}  // namespace

double confidence_scalar(double y_c, ConfVariant variant) {
    if (variant == ConfVariant::sigmoid) return 1.0 / (1.0 + std::exp(-y_c));
    if (y_c == 0.0) return 0.5;
    const double ay = std::fabs(y_c);
    const double s = (y_c > 0.0 ? 1.0 : -1.0) * std::sin(2.0 * kPi * ay / (8.0 + 0.15 * ay));
    return (s + 1.0) / 2.0;
}

double confidence_scalar_grad(double y_c, ConfVariant variant) {
    if (variant == ConfVariant::sigmoid) {
        const double c = 1.0 / (1.0 + std::exp(-y_c));
        return c * (1.0 - c);
    }
    if (y_c == 0.0) return 0.0;
    // Even in y: d/dy [sign(y) sin(theta(|y|))] = cos(theta) * theta'(|y|),
    // theta(t) = 2*pi*t / (8 + 0.15 t), theta'(t) = 16*pi / (8 + 0.15 t)^2.
    const double ay = std::fabs(y_c);
    const double denom = 8.0 + 0.15 * ay;
    return 8.0 * kPi * std::cos(2.0 * kPi * ay / denom) / (denom * denom);
}

SelfConfidenceMap confidence_activation(const Tensor& y_c, ConfVariant variant) {
    SelfConfidenceMap out;
    out.values = Tensor(y_c.shape());
    double sum = 0.0;
    for (int64_t i = 0; i < y_c.numel(); ++i) {
        if (!std::isfinite(y_c[i]))
            throw std::domain_error("confidence_activation: non-finite input");
        const double c = confidence_scalar(y_c[i], variant);
        out.values[i] = c;
        sum += c;
    }
    out.mean = sum / static_cast<double>(y_c.numel());
    return out;
}

double area_target(double alpha) {
    if (!(alpha > 0.0)) throw std::domain_error("area_target: alpha must be > 0");
    return 1.0 / (1.0 + alpha);
}

double area_penalty(double c_mean, double area_target_value) {
    const double c = std::min(1.0 - kClampEps, std::max(kClampEps, c_mean));
    const double d = c - area_target_value;
    return d * d / (c * (1.0 - c));
}

double area_penalty_grad(double c_mean, double area_target_value) {
    if (c_mean <= kClampEps || c_mean >= 1.0 - kClampEps) return 0.0;
    const double c = c_mean;
    const double d = c - area_target_value;
    const double denom = c * (1.0 - c);
    return (2.0 * d * denom - d * d * (1.0 - 2.0 * c)) / (denom * denom);
}

void blur_params(int64_t image_side, int64_t feature_side, int64_t& kernel_size,
                 double& sigma) {
    if (feature_side < 1 || image_side < feature_side)
        throw std::domain_error("blur_params: require image_side >= feature_side >= 1");
    kernel_size = 2 * (image_side / feature_side) + 1;
    sigma = static_cast<double>(image_side) / (2.0 * static_cast<double>(feature_side));
}

ReconTarget blur_target(const Tensor& image, int64_t feature_side) {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2))
        throw std::invalid_argument("blur_target: image must be [3,s,s]");
    ReconTarget t;
    blur_params(image.dim(1), feature_side, t.kernel_size, t.sigma);
    kernels::gaussian_blur(image, t.kernel_size, t.sigma, t.image);
    return t;
}

double confidence_loss(const Tensor& recon, const ReconTarget& target,
                       double c_mean, double alpha, double lambda) {
    check_recon_shapes(recon, target);
    if (lambda < 0.0) throw std::invalid_argument("confidence_loss: lambda must be >= 0");
    const double omega = area_penalty(c_mean, area_target(alpha));
    return (1.0 + omega) * (mse(target.image, recon) + lambda) - lambda;
}

double reconstruction_loss(const Tensor& recon, const ReconTarget& target,
                           const SelfConfidenceMap& conf, double alpha) {
    check_recon_shapes(recon, target);
    const int64_t H = recon.dim(1), W = recon.dim(2);
    if (conf.values.rank() != 2 || conf.values.dim(0) != H || conf.values.dim(1) != W)
        throw std::invalid_argument("reconstruction_loss: confidence map shape mismatch");
    double acc = 0.0;
    for (int64_t ch = 0; ch < 3; ++ch) {
        for (int64_t p = 0; p < H * W; ++p) {
            const double e = target.image[ch * H * W + p] - recon[ch * H * W + p];
            const double c = conf.values[p];
            acc += (alpha * c + (1.0 - c)) * e * e;
        }
    }
    return acc / static_cast<double>(3 * H * W);
}

namespace {

LossTerms total_loss_impl(const Tensor& decoder_out, const ReconTarget& target,
                          double alpha, double lambda, ConfVariant variant,
                          Tensor* grad_out) {
    if (decoder_out.rank() != 3 || decoder_out.dim(0) != 4)
        throw std::invalid_argument("total_loss: decoder output must be [4,H,W]");
    const int64_t H = decoder_out.dim(1), W = decoder_out.dim(2);
    if (target.image.dim(1) != H || target.image.dim(2) != W)
        throw std::invalid_argument("total_loss: decoder/target spatial mismatch");
    if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be >= 0");

    const int64_t np = H * W;       // pixels
    const int64_t nr = 3 * np;      // reconstruction elements
    const double* out = decoder_out.data();
    const double* tgt = target.image.data();
    const double* yc = out + nr;    // channel 4

    LossTerms terms;
    terms.area_target = area_target(alpha);

    // Confidence map from channel 4.
    Tensor conf({H, W});
    double csum = 0.0;
    for (int64_t p = 0; p < np; ++p) {
        if (!std::isfinite(yc[p]))
            throw std::domain_error("total_loss: non-finite confidence pre-activation");
        conf[p] = confidence_scalar(yc[p], variant);
        csum += conf[p];
    }
    terms.c_mean = csum / static_cast<double>(np);
    terms.omega = area_penalty(terms.c_mean, terms.area_target);

    // Shared error pass.
    double sq_sum = 0.0;          // sum of squared errors
    double weighted_sq_sum = 0.0; // sum of (alpha*C + 1 - C) * e^2
    for (int64_t ch = 0; ch < 3; ++ch) {
        const double* r = out + ch * np;
        const double* t = tgt + ch * np;
        for (int64_t p = 0; p < np; ++p) {
            if (!std::isfinite(r[p]) || !std::isfinite(t[p]))
                throw std::domain_error("total_loss: non-finite reconstruction or target");
            const double e = t[p] - r[p];
            const double e2 = e * e;
            sq_sum += e2;
            weighted_sq_sum += (alpha * conf[p] + 1.0 - conf[p]) * e2;
        }
    }
    const double mse_val = sq_sum / static_cast<double>(nr);
    terms.conf_loss = (1.0 + terms.omega) * (mse_val + lambda) - lambda;
    terms.recon_loss = weighted_sq_sum / static_cast<double>(nr);
    terms.total = terms.conf_loss + terms.recon_loss;

    if (grad_out == nullptr) return terms;
    *grad_out = Tensor({4, H, W});
    double* g = grad_out->data();

    // Reconstruction channels: conf-loss and recon-loss both differentiate
    // through e = tgt - recon, d(e^2)/d(recon) = -2e.
    const double conf_scale = (1.0 + terms.omega) * 2.0 / static_cast<double>(nr);
    for (int64_t ch = 0; ch < 3; ++ch) {
        const double* r = out + ch * np;
        const double* t = tgt + ch * np;
        double* gr = g + ch * np;
        for (int64_t p = 0; p < np; ++p) {
            const double w = alpha * conf[p] + 1.0 - conf[p];
            gr[p] = (conf_scale + 2.0 * w / static_cast<double>(nr)) * (r[p] - t[p]);
        }
    }

    // Confidence channel: omega couples every pixel through the mean; the
    // recon loss contributes (alpha-1) * sum over channels of e^2 per pixel.
    const double domega = area_penalty_grad(terms.c_mean, terms.area_target);
    const double mean_scale = (mse_val + lambda) * domega / static_cast<double>(np);
    double* gc = g + nr;
    for (int64_t p = 0; p < np; ++p) {
        double e2_sum = 0.0;
        for (int64_t ch = 0; ch < 3; ++ch) {
            const double e = tgt[ch * np + p] - out[ch * np + p];
            e2_sum += e * e;
        }
        const double dl_dc = mean_scale + (alpha - 1.0) * e2_sum / static_cast<double>(nr);
        gc[p] = dl_dc * confidence_scalar_grad(yc[p], variant);
    }
    return terms;
}

}  // namespace

LossTerms total_loss(const Tensor& decoder_out, const ReconTarget& target,
                     double alpha, double lambda, ConfVariant variant) {
    return total_loss_impl(decoder_out, target, alpha, lambda, variant, nullptr);
}

LossTerms total_loss_with_grad(const Tensor& decoder_out, const ReconTarget& target,
                               double alpha, double lambda, ConfVariant variant,
                               Tensor& grad) {
    return total_loss_impl(decoder_out, target, alpha, lambda, variant, &grad);
}

}  // namespace scan::core_math
