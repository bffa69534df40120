#include "lr/runconfig.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

#include "lr/io.hpp"

namespace lr::cli {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed) {
            if (key == a) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError("config: unknown key '" + where + key + "'");
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config: bad value for '" + std::string(key) + "': " + e.what());
        }
    }
}

}  // namespace

json RunConfig::to_json() const {
    return json{
        {"seed", seed},
        {"data",
         {{"source", data.source},
          {"n", data.n},
          {"classes", data.classes},
          {"size", data.size},
          {"idx_images", data.idx_images},
          {"idx_labels", data.idx_labels},
          {"split",
           {{"target_train", data.split_target_train},
            {"detector_train", data.split_detector_train},
            {"calibration", data.split_calibration},
            {"test", data.split_test}}}}},
        {"model",
         {{"spec", model.spec}, {"epochs", model.epochs}, {"batch", model.batch}, {"lr", model.lr}}},
        {"attack",
         {{"kind", attack.kind},
          {"epsilon", attack.epsilon},
          {"alpha", attack.alpha},
          {"iters", attack.iters},
          {"random_start", attack.random_start}}},
        {"detector",
         {{"taps", detector.taps},
          {"hidden", {detector.hidden1, detector.hidden2}},
          {"lr", detector.lr},
          {"epochs", detector.epochs},
          {"batch", detector.batch},
          {"theta", detector.theta}}},
        {"eval",
         {{"bench", eval.bench},
          {"bench_reps", eval.bench_reps},
          {"max_eval_samples", eval.max_eval_samples}}},
        {"sweep", {{"epsilons", sweep.epsilons}, {"tap_configs", sweep.tap_configs}}},
    };
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig cfg;
    reject_unknown(j, {"seed", "data", "model", "attack", "detector", "eval", "sweep"}, "");
    get_if(j, "seed", cfg.seed);
    if (j.contains("data")) {
        const auto& jd = j.at("data");
        reject_unknown(jd, {"source", "n", "classes", "size", "idx_images", "idx_labels", "split"},
                       "data.");
        get_if(jd, "source", cfg.data.source);
        get_if(jd, "n", cfg.data.n);
        get_if(jd, "classes", cfg.data.classes);
        get_if(jd, "size", cfg.data.size);
        get_if(jd, "idx_images", cfg.data.idx_images);
        get_if(jd, "idx_labels", cfg.data.idx_labels);
        if (jd.contains("split")) {
            const auto& js = jd.at("split");
            reject_unknown(js, {"target_train", "detector_train", "calibration", "test"},
                           "data.split.");
            get_if(js, "target_train", cfg.data.split_target_train);
            get_if(js, "detector_train", cfg.data.split_detector_train);
            get_if(js, "calibration", cfg.data.split_calibration);
            get_if(js, "test", cfg.data.split_test);
        }
    }
    if (j.contains("model")) {
        const auto& jm = j.at("model");
        reject_unknown(jm, {"spec", "epochs", "batch", "lr"}, "model.");
        get_if(jm, "spec", cfg.model.spec);
        get_if(jm, "epochs", cfg.model.epochs);
        get_if(jm, "batch", cfg.model.batch);
        get_if(jm, "lr", cfg.model.lr);
    }
    if (j.contains("attack")) {
        const auto& ja = j.at("attack");
        reject_unknown(ja, {"kind", "epsilon", "alpha", "iters", "random_start"}, "attack.");
        get_if(ja, "kind", cfg.attack.kind);
        get_if(ja, "epsilon", cfg.attack.epsilon);
        get_if(ja, "alpha", cfg.attack.alpha);
        get_if(ja, "iters", cfg.attack.iters);
        get_if(ja, "random_start", cfg.attack.random_start);
    }
    if (j.contains("detector")) {
        const auto& jt = j.at("detector");
        reject_unknown(jt, {"taps", "hidden", "lr", "epochs", "batch", "theta"}, "detector.");
        get_if(jt, "taps", cfg.detector.taps);
        if (jt.contains("hidden")) {
            std::vector<int> hidden;
            get_if(jt, "hidden", hidden);
            if (hidden.size() != 2) throw ConfigError("config: detector.hidden needs exactly two sizes");
            cfg.detector.hidden1 = hidden[0];
            cfg.detector.hidden2 = hidden[1];
        }
        get_if(jt, "lr", cfg.detector.lr);
        get_if(jt, "epochs", cfg.detector.epochs);
        get_if(jt, "batch", cfg.detector.batch);
        get_if(jt, "theta", cfg.detector.theta);
    }
    if (j.contains("eval")) {
        const auto& je = j.at("eval");
        reject_unknown(je, {"bench", "bench_reps", "max_eval_samples"}, "eval.");
        get_if(je, "bench", cfg.eval.bench);
        get_if(je, "bench_reps", cfg.eval.bench_reps);
        get_if(je, "max_eval_samples", cfg.eval.max_eval_samples);
    }
    if (j.contains("sweep")) {
        const auto& js = j.at("sweep");
        reject_unknown(js, {"epsilons", "tap_configs"}, "sweep.");
        get_if(js, "epsilons", cfg.sweep.epsilons);
        get_if(js, "tap_configs", cfg.sweep.tap_configs);
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    json j;
    try {
        j = json::parse(io::read_text(path));
    } catch (const json::exception& e) {
        throw ConfigError("config: cannot parse " + path + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::validate() const {
    if (data.source != "synthetic" && data.source != "idx") {
        throw ConfigError("config: data.source must be 'synthetic' or 'idx'");
    }
    if (data.source == "idx" && (data.idx_images.empty() || data.idx_labels.empty())) {
        throw ConfigError("config: idx source needs data.idx_images and data.idx_labels");
    }
    if (data.n < data.classes) throw ConfigError("config: data.n must be >= data.classes");
    const double fsum = data.split_target_train + data.split_detector_train +
                        data.split_calibration + data.split_test;
    if (data.split_target_train <= 0 || data.split_detector_train <= 0 ||
        data.split_calibration <= 0 || data.split_test <= 0 || std::fabs(fsum - 1.0) > 1e-9) {
        throw ConfigError("config: data.split fractions must be positive and sum to 1");
    }
    if (model.spec != "desk") throw ConfigError("config: unknown model.spec '" + model.spec + "'");
    if (model.epochs < 1) throw ConfigError("config: model.epochs must be >= 1");
    if (model.batch < 1) throw ConfigError("config: model.batch must be >= 1");
    if (model.lr < 0) throw ConfigError("config: model.lr must be >= 0");
    attacks::AttackConfig::kind_from_name(attack.kind);
    if (attack.epsilon < 0.0 || attack.epsilon > 1.0) {
        throw ConfigError("config: attack.epsilon must lie in [0,1]");
    }
    if (attack.iters < 1) throw ConfigError("config: attack.iters must be >= 1");
    if (detector.hidden1 < 1 || detector.hidden2 < 1) {
        throw ConfigError("config: detector.hidden sizes must be positive");
    }
    if (detector.theta <= 0.0 || detector.theta >= 100.0) {
        throw ConfigError("config: detector.theta must lie in (0,100)");
    }
    if (detector.epochs < 0) throw ConfigError("config: detector.epochs must be >= 0");
    if (eval.bench_reps < 3) throw ConfigError("config: eval.bench_reps must be >= 3");
    if (eval.max_eval_samples < 0) throw ConfigError("config: eval.max_eval_samples must be >= 0");
}

std::string RunConfig::canonical() const { return to_json().dump(); }

std::string RunConfig::run_id() const { return io::hex64(io::fnv1a64(canonical())); }

attacks::AttackConfig RunConfig::attack_config() const {
    attacks::AttackConfig a;
    a.kind = attacks::AttackConfig::kind_from_name(attack.kind);
    a.epsilon = static_cast<Real>(attack.epsilon);
    a.alpha = static_cast<Real>(attack.alpha);
    a.iters = attack.iters;
    a.random_start = attack.random_start;
    if (a.kind == attacks::AttackConfig::Kind::fgsm) {
        a.iters = 1;
        a.random_start = false;
        if (a.alpha <= Real{0}) a.alpha = a.epsilon;
    }
    if (a.kind == attacks::AttackConfig::Kind::bim) a.random_start = false;
    a.seed = seed;
    return a;
}

data::SplitPlan RunConfig::split_plan() const {
    data::SplitPlan plan;
    plan.target_train = data.split_target_train;
    plan.detector_train = data.split_detector_train;
    plan.calibration = data.split_calibration;
    plan.test = data.split_test;
    plan.seed = seed;
    return plan;
}

void apply_override(nlohmann::json& j, const std::string& dotted) {
    const auto eq = dotted.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like path.to.key=value, got '" + dotted + "'");
    }
    const std::string path = dotted.substr(0, eq);
    const std::string value = dotted.substr(eq + 1);

    json* cur = &j;
    size_t begin = 0;
    while (true) {
        const auto dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
        if (key.empty()) throw ConfigError("override has an empty path segment: '" + dotted + "'");
        if (dot == std::string::npos) {
            json parsed = json::parse(value, nullptr, false);
            (*cur)[key] = parsed.is_discarded() ? json(value) : parsed;
            return;
        }
        cur = &(*cur)[key];
        begin = dot + 1;
    }
}

}  // namespace lr::cli
