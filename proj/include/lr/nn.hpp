#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lr/data.hpp"
#include "lr/tape.hpp"
#include "lr/tensor.hpp"

namespace lr::nn {

struct LayerSpec {
    enum class Kind { conv3x3, dense, relu, flatten };
    Kind kind = Kind::relu;
    std::string name;
    int units = 0;   // conv: output channels; dense: output units
    int stride = 1;  // conv only
    int pad = 1;     // conv only
};

LayerSpec conv3x3(std::string name, int channels, int stride = 1, int pad = 1);
LayerSpec dense(std::string name, int units);
LayerSpec relu_layer(std::string name);
LayerSpec flatten_layer(std::string name);

const char* kind_name(LayerSpec::Kind k);
LayerSpec::Kind kind_from_name(const std::string& s);

// One output per layer, in graph order.
struct Activations {
    std::vector<std::string> names;
    std::vector<Tensor> values;

    const Tensor& by_name(const std::string& name) const;
    int index_of(const std::string& name) const;  // -1 if absent
};

struct TrainMeta {
    uint64_t init_seed = 0;
    uint64_t train_seed = 0;
    int epochs = 0;
    double final_accuracy = -1.0;
};

// Ordered layer sequence with its parameters. Parameters are shared across
// copies; a trained graph is treated as immutable.
class ModelGraph {
  public:
    ModelGraph() = default;

    const std::vector<LayerSpec>& layers() const { return layers_; }
    const Shape& input_shape() const { return input_shape_; }  // per-sample {C,H,W}
    int classes() const { return classes_; }
    int feature_index() const { return feature_index_; }
    const std::string& feature_layer_name() const { return layers_[feature_index_].name; }

    // Per-sample output shape of layer i (no batch dimension).
    const Shape& layer_output_shape(int i) const { return out_shapes_.at(static_cast<size_t>(i)); }
    int layer_index(const std::string& name) const;

    // Flat parameter list in graph order (weight then bias per learned layer).
    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }

    uint64_t params_digest() const;

    TrainMeta meta;

  private:
    friend ModelGraph build_model(std::vector<LayerSpec> spec, Shape input_shape, int classes,
                                  uint64_t seed);
    friend std::pair<Tensor, Activations> forward_with_taps(const ModelGraph& m, const Tensor& x,
                                                            Tape* tape);

    std::vector<LayerSpec> layers_;
    std::vector<Shape> out_shapes_;
    std::vector<Tensor> params_;
    // Index of (weight, bias) in params_ per layer; -1 for parameterless layers.
    std::vector<int> param_at_;
    Shape input_shape_;
    int classes_ = 0;
    int feature_index_ = -1;
};

// Validates composability, initializes parameters from the seeded generator
// (fan-in-scaled uniform weights, zero biases), and resolves the feature
// layer: the post-activation output of the last hidden dense layer.
ModelGraph build_model(std::vector<LayerSpec> spec, Shape input_shape, int classes, uint64_t seed);

// The default desk-scale target: three conv blocks, a 64-unit feature layer,
// and a 4-class head on 1x28x28 inputs.
ModelGraph desk_model(uint64_t seed);
std::vector<LayerSpec> desk_spec();

// Forward pass exposing every layer output. x is batched [B, ...input_shape].
std::pair<Tensor, Activations> forward_with_taps(const ModelGraph& m, const Tensor& x,
                                                 Tape* tape = nullptr);
Tensor forward(const ModelGraph& m, const Tensor& x, Tape* tape = nullptr);

struct EpochStats {
    double loss = 0.0;
    double accuracy = 0.0;
};
using TrainHistory = std::vector<EpochStats>;

// Adam training with seeded shuffle order; deterministic for fixed inputs.
TrainHistory train_classifier(ModelGraph& m, const data::Dataset& train, int epochs, int batch,
                              Real lr, uint64_t seed);

double evaluate_accuracy(const ModelGraph& m, const data::Dataset& ds);

// Per-sample predicted classes.
std::vector<int> predict(const ModelGraph& m, const Tensor& images);

void save_checkpoint(const ModelGraph& m, const std::string& path);
ModelGraph load_checkpoint(const std::string& path);

}  // namespace lr::nn
