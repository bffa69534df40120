#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lr/attacks.hpp"
#include "lr/data.hpp"
#include "lr/detector.hpp"
#include "lr/nn.hpp"

namespace lr::eval {

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

// Sweeps thresholds over the distinct scores in descending order; starts at
// (0,0) and ends at (1,1). Trapezoidal area equals auc().
struct RocCurve {
    std::vector<RocPoint> points;
    double trapezoid_area() const;
};

// Mann-Whitney statistic with half credit for ties; adversarial is the
// positive class. O(n log n).
double auc(std::span<const double> clean, std::span<const double> adversarial);

RocCurve roc_curve(std::span<const double> clean, std::span<const double> adversarial);

struct Stats {
    double mean = 0.0;
    double stddev = 0.0;
    int64_t count = 0;
};

Stats make_stats(std::span<const double> values);

// ||a-b||_2 / (||a||_2 + ||b||_2); negative when both norms are zero.
double normalized_shift(std::span<const Real> a, std::span<const Real> b);

struct ShiftStats {
    Stats first;
    Stats feature;
    std::vector<double> first_per_sample;    // paired, skipped samples removed
    std::vector<double> feature_per_sample;
    int skipped = 0;
};

// Per-sample normalized activation shifts between paired clean/adversarial
// inputs, at a named early layer and at the feature layer. Samples whose
// denominator vanishes at either layer are skipped and counted.
ShiftStats layer_shift_stats(const nn::ModelGraph& m, const Tensor& clean_images,
                             const Tensor& adv_images, const std::string& first_layer,
                             const std::string& feature_layer);

struct ErrorGapStats {
    Stats clean;
    Stats adversarial;
    double gap = 0.0;  // mean(adversarial) - mean(clean)
};

ErrorGapStats error_gap_stats(std::span<const double> clean_scores,
                              std::span<const double> adv_scores);

struct PtsResult {
    double target_seconds = 0.0;    // per-sample forward pass
    double detector_seconds = 0.0;  // per-sample tap extraction + regression + loss
    int repetitions = 0;
};

// Median-of-repetitions wall clock per sample, single-threaded, after one
// warm-up pass. Detector time covers the work added on top of a forward
// pass that the deployed model performs anyway.
PtsResult bench_pts(const nn::ModelGraph& m, const detector::Regressor& regressor,
                    std::span<const detector::TapSpec> taps, const Tensor& samples,
                    int repetitions);

struct EvalReport {
    std::string run_id;
    std::string model_digest;
    std::string detector_digest;
    attacks::AttackConfig attack;
    std::optional<double> auc_value;
    RocCurve roc;
    Stats d1;
    Stats dn1;
    int shift_skipped = 0;
    Stats ec;
    Stats ea;
    double gap = 0.0;
    double theta = 0.0;
    double h = 0.0;
    double fpr_at_h = 0.0;
    double tpr_at_h = 0.0;
    std::optional<double> pts_target;
    std::optional<double> pts_detector;
    int n_clean = 0;
    int n_adv = 0;
    int n_eligible = 0;

    std::string to_json() const;     // one structured document per run
    std::string csv_row() const;
    static std::string csv_header();
};

struct EvalInputs {
    const nn::ModelGraph* model = nullptr;
    const detector::Regressor* regressor = nullptr;
    std::span<const detector::TapSpec> taps;
    detector::Threshold threshold;
    const data::Dataset* test_clean = nullptr;
    std::string run_id;
};

// Full attack + score + report cycle for one attack configuration. FPR at h
// is measured on the whole held-out clean set; AUC uses the matched clean
// counterparts of the successful adversarials.
EvalReport evaluate_attack(const EvalInputs& in, const attacks::AttackConfig& attack);

// Same report, but for an adversarial set that was already built (or loaded
// from disk). The outcome's original indices must refer to in.test_clean.
EvalReport evaluate_outcome(const EvalInputs& in, const attacks::AttackOutcome& outcome);

struct SweepEntry {
    std::string label;
    double param = 0.0;
    std::optional<EvalReport> report;
    std::string error;  // set when the entry failed (empty set, invalid taps)
};

struct SweepResult {
    std::vector<SweepEntry> entries;
};

// Shared model/detector, one attack+evaluate cycle per epsilon. Epsilons
// must be strictly increasing, each in (0,1].
SweepResult sweep_epsilon(const EvalInputs& in, const attacks::AttackConfig& base,
                          std::span<const double> epsilons);

struct TapSweepContext {
    const nn::ModelGraph* model = nullptr;
    const data::Dataset* detector_train = nullptr;
    const data::Dataset* calibration = nullptr;
    const data::Dataset* test_clean = nullptr;
    detector::DetectorConfig base_config;  // taps replaced per entry
    attacks::AttackConfig attack;
    std::string run_id;
};

// Trains a fresh regressor per named tap configuration (same seed) against a
// shared adversarial set. Invalid configurations are recorded per entry and
// the sweep continues.
SweepResult sweep_taps(const TapSweepContext& ctx,
                       const std::vector<std::pair<std::string, std::vector<detector::TapSpec>>>& configs);

}  // namespace lr::eval
