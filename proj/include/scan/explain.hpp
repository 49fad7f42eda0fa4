#pragma once

#include <vector>

#include "scan/core_math.hpp"
#include "scan/decoder.hpp"
#include "scan/models.hpp"

namespace scan {

struct Explanation {
    core_math::SelfConfidenceMap saliency;  // image resolution, values in [0,1]
    Tensor reconstruction;                  // [3,s,s], raw decoder channels
    Tensor coarse_saliency;                 // pooled to tap side, upsampled back
    int64_t target_class = -1;
    double percentile_used = 0.0;
};

// Fairness-protocol reduction: average-pool to coarse_side, then bilinear
// upsample back to the original side.
Tensor coarse_map(const Tensor& saliency, int64_t coarse_side);

// class_idx < 0 selects the model's predicted class. ConfigError when the
// decoder's recorded tap geometry does not match the target.
Explanation explain(Decoder& decoder, TargetModel& target, const Tensor& image,
                    int64_t class_idx = -1, double p = 95.0);

// One explanation per percentile from a single feature/gradient pass.
std::vector<Explanation> percentile_sweep(Decoder& decoder, TargetModel& target,
                                          const Tensor& image, int64_t class_idx,
                                          const std::vector<double>& ps);

// Tap layer the decoder was trained against, resolved against this target.
std::string resolve_decoder_tap(const Decoder& decoder, const TargetModel& target);

}  // namespace scan
