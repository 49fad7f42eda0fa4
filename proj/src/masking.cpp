#include "scan/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace scan::masking {

namespace {

double interpolated_percentile(const double* begin, int64_t n, double p) {
    std::vector<double> sorted(begin, begin + n);
    std::sort(sorted.begin(), sorted.end());
    const double rank = p / 100.0 * static_cast<double>(n - 1);
    const int64_t lo = static_cast<int64_t>(std::floor(rank));
    const int64_t hi = std::min<int64_t>(lo + 1, n - 1);
    const double frac = rank - static_cast<double>(lo);
    return sorted[static_cast<size_t>(lo)] +
           frac * (sorted[static_cast<size_t>(hi)] - sorted[static_cast<size_t>(lo)]);
}

}  // namespace

double percentile_threshold(const Tensor& g, double p) {
    if (g.numel() == 0)
        throw std::invalid_argument("percentile_threshold: empty tensor");
    if (!(p >= 0.0 && p <= 100.0))
        throw std::domain_error("percentile_threshold: p must be in [0,100]");
    return interpolated_percentile(g.data(), g.numel(), p);
}

MaskedFeature gradient_mask(const Tensor& f, const Tensor& g, double p,
                            bool per_channel) {
    if (!f.same_shape(g))
        throw std::invalid_argument("gradient_mask: feature/gradient shape mismatch");
    if (!(p >= 0.0 && p <= 100.0))
        throw std::domain_error("gradient_mask: p must be in [0,100]");

    MaskedFeature out;
    out.percentile = p;
    out.mask = Tensor(f.shape());
    out.values = Tensor(f.shape());

    if (per_channel && f.rank() >= 2) {
        const int64_t channels = f.dim(0);
        const int64_t per = f.numel() / channels;
        for (int64_t c = 0; c < channels; ++c) {
            const double theta = interpolated_percentile(g.data() + c * per, per, p);
            for (int64_t i = c * per; i < (c + 1) * per; ++i) {
                const double m = g[i] >= theta ? 1.0 : 0.0;
                out.mask[i] = m;
                out.values[i] = f[i] * m;
            }
        }
        return out;
    }

    const double theta = percentile_threshold(g, p);
    for (int64_t i = 0; i < f.numel(); ++i) {
        const double m = g[i] >= theta ? 1.0 : 0.0;
        out.mask[i] = m;
        out.values[i] = f[i] * m;
    }
    return out;
}

double sample_training_percentile(Rng& rng) { return rng.uniform(70.0, 100.0); }

}  // namespace scan::masking
