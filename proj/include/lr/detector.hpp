#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lr/data.hpp"
#include "lr/nn.hpp"
#include "lr/tensor.hpp"

namespace lr::detector {

// Half-open slice with stride: indices start, start+step, ... < end.
struct SliceTriple {
    int start = 0;
    int end = 0;
    int step = 1;
};

// Selects one layer activation and cuts a sub-block out of it. `dims` has
// one triple per non-batch dimension of that activation.
struct TapSpec {
    std::string layer;
    std::vector<SliceTriple> dims;
};

int64_t tap_count(const TapSpec& tap, const Shape& per_sample_shape);  // elements kept

struct DetectorConfig {
    std::vector<TapSpec> taps;
    int hidden1 = 256;
    int hidden2 = 256;
    Real lr = Real{3e-4};
    int epochs = 20;
    int batch = 32;
    double theta = 95.0;
    uint64_t seed = 0;

    // Taps nonempty, resolvable, strictly earlier than the feature layer.
    void validate(const nn::ModelGraph& m) const;
};

// Two-hidden-layer MLP mapping the concatenated tap vector to the model's
// feature vector.
class Regressor {
  public:
    Regressor() = default;

    static Regressor init(int input_dim, int hidden1, int hidden2, int output_dim, uint64_t seed);

    Tensor forward(const Tensor& v, Tape* tape = nullptr) const;

    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }

    int input_dim() const { return in_; }
    int output_dim() const { return out_; }
    int hidden1() const { return h1_; }
    int hidden2() const { return h2_; }

    uint64_t params_digest() const;

    int epochs_trained = 0;

  private:
    std::vector<Tensor> params_;  // w1,b1,w2,b2,w3,b3
    int in_ = 0, h1_ = 0, h2_ = 0, out_ = 0;
};

struct Threshold {
    double h = 0.0;
    double theta = 0.0;
    int64_t calibration_count = 0;
    std::string calibration_digest;  // FNV-1a of the sorted score bytes
};

// Per-tap slice, row-major flatten, concatenate in tap order. Input
// activations are batched; output is [B, |v|].
Tensor extract_v(const nn::Activations& acts, std::span<const TapSpec> taps);

// |v| for a tap list resolved against a graph (throws TapError if invalid).
int64_t v_dim(const nn::ModelGraph& m, std::span<const TapSpec> taps);

// Post-relu outputs of the first two conv blocks, first 4 channels, centered
// half-spatial window each.
std::vector<TapSpec> default_taps(const nn::ModelGraph& m);

// Named configurations: "early-mixture" (the default), "first-layer",
// "last-hidden".
std::vector<TapSpec> preset_taps(const nn::ModelGraph& m, const std::string& name);

struct TrainResult {
    Regressor regressor;
    std::vector<double> epoch_loss;
};

// Fits the regressor on clean data only (provenance-guarded), minimizing the
// per-dimension MSE against the feature vector.
TrainResult train_regressor(const nn::ModelGraph& m, const data::Dataset& clean,
                            const DetectorConfig& config);

// Per-sample regression loss; the detection score.
std::vector<double> score(const nn::ModelGraph& m, const Regressor& regressor,
                          std::span<const TapSpec> taps, const Tensor& x);

// h = the floor(K*theta/100)-th ascending order statistic (1-indexed); a
// degenerate index of 0 selects the smallest score.
Threshold calibrate_threshold(std::span<const double> clean_scores, double theta);

enum class Verdict { clean, adversarial };

// Adversarial iff the score strictly exceeds h.
Verdict detect(double score_value, const Threshold& threshold);

// Detector checkpoint: LRCK container with kind="detector", tap specs and
// theta/h in the header, regressor parameters in the blob.
struct DetectorBundle {
    DetectorConfig config;
    Regressor regressor;
    std::optional<Threshold> threshold;
};

void save_detector(const DetectorBundle& bundle, const std::string& path);
DetectorBundle load_detector(const std::string& path);

}  // namespace lr::detector
