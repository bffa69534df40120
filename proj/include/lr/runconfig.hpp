#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lr/attacks.hpp"
#include "lr/data.hpp"

namespace lr::cli {

inline constexpr const char* kToolVersion = "lr-lab 0.1.0";

// One experiment document. The output directory is deliberately not part of
// the config, so identical configs hash to identical run ids wherever the
// artifacts land. Unknown keys are rejected; see docs/formats.md for the
// schema.
struct RunConfig {
    uint64_t seed = 7;

    struct DataCfg {
        std::string source = "synthetic";  // "synthetic" | "idx"
        int n = 8000;
        int classes = 4;
        int size = 28;
        std::string idx_images;
        std::string idx_labels;
        double split_target_train = 0.5;
        double split_detector_train = 0.25;
        double split_calibration = 0.125;
        double split_test = 0.125;
    } data;

    struct ModelCfg {
        std::string spec = "desk";
        int epochs = 10;
        int batch = 32;
        double lr = 1e-3;
    } model;

    struct AttackCfg {
        std::string kind = "pgd";
        double epsilon = 0.03;
        double alpha = 0.0;  // 0 selects epsilon / 4
        int iters = 10;
        bool random_start = true;
    } attack;

    struct DetectorCfg {
        std::string taps = "early-mixture";  // preset name
        int hidden1 = 256;
        int hidden2 = 256;
        double lr = 3e-4;
        int epochs = 20;
        int batch = 32;
        double theta = 95.0;
    } detector;

    struct EvalCfg {
        bool bench = true;
        int bench_reps = 5;
        int max_eval_samples = 0;  // 0 = use the whole test split
    } eval;

    struct SweepCfg {
        std::vector<double> epsilons{0.01, 0.03, 0.09, 0.12, 0.15, 0.3};
        std::vector<std::string> tap_configs{"first-layer", "early-mixture", "last-hidden"};
    } sweep;

    nlohmann::json to_json() const;  // canonical form, defaults filled in
    static RunConfig from_json(const nlohmann::json& j);  // throws ConfigError
    static RunConfig load(const std::string& path);

    std::string canonical() const;
    std::string run_id() const;  // hex FNV-1a-64 of the canonical form

    attacks::AttackConfig attack_config() const;
    data::SplitPlan split_plan() const;
    void validate() const;  // throws ConfigError
};

// Applies "a.b.c=value" to a config JSON document; value parsed as a JSON
// literal, falling back to a string.
void apply_override(nlohmann::json& j, const std::string& dotted);

}  // namespace lr::cli
