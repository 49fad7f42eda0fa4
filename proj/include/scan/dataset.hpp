#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scan/tensor.hpp"

namespace scan {

struct Dataset {
    Tensor images;                 // [N,3,side,side], values in [0,1]
    std::vector<int64_t> labels;   // [N]
    int64_t num_classes = 0;

    int64_t size() const { return images.numel() == 0 ? 0 : images.shape()[0]; }
    int64_t image_side() const { return images.numel() == 0 ? 0 : images.shape()[2]; }
    Tensor image(int64_t i) const;  // [3,side,side]
};

struct SplitDataset {
    Dataset train;
    Dataset val;
};

struct ShapesSpec {
    int64_t n_train = 2048;
    int64_t n_val = 128;
    int64_t num_classes = 2;
    int64_t image_side = 32;
    uint64_t seed = 1;
};

// Synthetic classification set: one filled shape per image over a random
// low-frequency color field, plus a small near-black decoy disc that carries
// no label information. Only the geometry encodes the class; the tint is a
// shared nuisance. Up to 4 classes.
SplitDataset make_shapes_dataset(const ShapesSpec& spec);

// CIFAR-10 binary batch format: records of 1 label byte + 3*1024 plane bytes.
Dataset load_cifar_file(const std::string& path, int64_t max_records = -1);
// dir with data_batch_*.bin (train) and test_batch.bin (val)
SplitDataset load_cifar_dir(const std::string& dir, int64_t max_train = -1,
                            int64_t max_val = -1);

// Per-sample channel means over the whole set, for mean-fill perturbation.
std::vector<double> channel_means(const Dataset& d);

Dataset subset(const Dataset& d, int64_t count);

}  // namespace scan
