#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lr/tensor.hpp"

namespace lr::data {

struct Dataset {
    Tensor images;             // [N,C,H,W], every pixel in [0,1]
    std::vector<int> labels;   // length N, values in [0, classes)
    int classes = 0;
    std::string provenance;    // generator seed or source file digests

    int size() const { return images.defined() ? images.dim(0) : 0; }
    Dataset subset(std::span<const int> indices) const;
};

// Fractions must be positive and sum to 1; the split is a partition driven
// by a seeded shuffle.
struct SplitPlan {
    double target_train = 0.5;
    double detector_train = 0.25;
    double calibration = 0.125;
    double test = 0.125;
    uint64_t seed = 0;
};

struct Splits {
    Dataset target_train;
    Dataset detector_train;
    Dataset calibration;
    Dataset test;
};

// Procedurally rasterized grayscale shapes, one family per class (disk,
// square, cross, triangle), seeded position/scale/contrast plus additive
// uniform noise of amplitude 0.1, clamped to [0,1]. Class-balanced within 1.
Dataset generate_synthetic(uint64_t seed, int n, int classes = 4, int size = 28);

// IDX (big-endian) image/label pair; pixel bytes scaled by 1/255.
Dataset load_idx(const std::string& image_path, const std::string& label_path);

Splits split(const Dataset& ds, const SplitPlan& plan);

// Copies the selected samples into a fresh [B,C,H,W] tensor.
Tensor gather_images(const Tensor& images, std::span<const int> indices);

}  // namespace lr::data
