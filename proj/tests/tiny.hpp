// Shared desk-independent fixture: a small 16x16 3-class model that trains
// in about a second, for tests that need a live classifier.
#pragma once

#include <vector>

#include "lr/data.hpp"
#include "lr/nn.hpp"

namespace tiny {

inline std::vector<lr::nn::LayerSpec> spec() {
    using namespace lr::nn;
    return {conv3x3("c1", 6, 2, 1), relu_layer("r1"), flatten_layer("flat"),
            dense("fc", 16),        relu_layer("r2"), dense("head", 3)};
}

inline lr::nn::ModelGraph model(uint64_t seed) {
    return lr::nn::build_model(spec(), {1, 16, 16}, 3, seed);
}

inline lr::data::Dataset dataset(uint64_t seed, int n) {
    return lr::data::generate_synthetic(seed, n, 3, 16);
}

struct Trained {
    lr::nn::ModelGraph model;
    lr::data::Dataset train;
    lr::data::Dataset test;
};

// Train once per process; tests share the result read-only.
inline const Trained& trained() {
    static const Trained t = []() {
        Trained out{model(71), dataset(72, 600), dataset(73, 150)};
        lr::nn::train_classifier(out.model, out.train, 8, 16, 2e-3f, 74);
        return out;
    }();
    return t;
}

}  // namespace tiny
