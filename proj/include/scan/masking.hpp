#pragma once

#include "scan/rng.hpp"
#include "scan/tensor.hpp"

namespace scan::masking {

struct MaskedFeature {
    Tensor values;     // source * mask, elementwise
    Tensor mask;       // {0,1}, same shape as source
    double percentile = 0.0;
};

// Linearly interpolated p-th percentile of the flattened values.
double percentile_threshold(const Tensor& g, double p);

// mask_i = 1 iff g_i >= Percentile(g, p); ties at the threshold are all
// retained. With per_channel the threshold is computed separately along
// dim 0 (off by default; layer-ablation option).
MaskedFeature gradient_mask(const Tensor& f, const Tensor& g, double p,
                            bool per_channel = false);

// Training augmentation: P ~ U[70, 100].
double sample_training_percentile(Rng& rng);

}  // namespace scan::masking
