#include "lr/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <sstream>

#include "lr/detector.hpp"
#include "lr/eval.hpp"
#include "lr/io.hpp"
#include "lr/nn.hpp"

namespace lr::cli {

namespace {

using nlohmann::json;

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return std::string(buf);
}

struct Paths {
    std::string dir;
    std::string config() const { return dir + "/config.json"; }
    std::string dataset_manifest() const { return dir + "/dataset.json"; }
    std::string model() const { return dir + "/model.ckpt"; }
    std::string adv_manifest() const { return dir + "/adv_manifest.json"; }
    std::string adv_blob() const { return dir + "/adv_images.bin"; }
    std::string detector() const { return dir + "/detector.ckpt"; }
    std::string threshold() const { return dir + "/threshold.json"; }
    std::string bench() const { return dir + "/bench.json"; }
    std::string report_json() const { return dir + "/report.json"; }
    std::string report_csv() const { return dir + "/report.csv"; }
    std::string sweep_eps_json() const { return dir + "/sweep_eps.json"; }
    std::string sweep_eps_csv() const { return dir + "/sweep_eps.csv"; }
    std::string sweep_taps_json() const { return dir + "/sweep_taps.json"; }
    std::string sweep_taps_csv() const { return dir + "/sweep_taps.csv"; }
    std::string manifest() const { return dir + "/manifest.json"; }
};

std::vector<std::string> stage_artifacts(const Paths& p, const std::string& stage) {
    if (stage == "synth-data") return {p.config(), p.dataset_manifest()};
    if (stage == "train-target") return {p.model()};
    if (stage == "attack") return {p.adv_manifest(), p.adv_blob()};
    if (stage == "train-detector") return {p.detector()};
    if (stage == "calibrate") return {p.threshold()};
    if (stage == "bench") return {p.bench()};
    if (stage == "evaluate") return {p.report_json(), p.report_csv()};
    if (stage == "sweep-eps") return {p.sweep_eps_json(), p.sweep_eps_csv()};
    if (stage == "sweep-taps") return {p.sweep_taps_json(), p.sweep_taps_csv()};
    return {};
}

// RunManifest: per-stage artifact digests plus provenance of the run.
class Manifest {
  public:
    Manifest(const Paths& paths, const RunConfig& cfg) : paths_(paths) {
        if (io::file_exists(paths_.manifest())) {
            try {
                j_ = json::parse(io::read_text(paths_.manifest()));
            } catch (const json::exception&) {
                j_ = json::object();
            }
        }
        const std::string digest = io::hex64(io::fnv1a64(cfg.canonical()));
        if (!j_.is_object() || j_.value("config_digest", "") != digest) {
            j_ = json{{"run_id", cfg.run_id()},
                      {"config_digest", digest},
                      {"tool_version", kToolVersion},
                      {"created_at", timestamp_utc()},
                      {"stages", json::object()}};
        }
    }

    bool stage_current(const std::string& stage) const {
        if (!j_.contains("stages") || !j_.at("stages").contains(stage)) return false;
        const auto& recorded = j_.at("stages").at(stage).at("artifacts");
        for (const auto& [path, digest] : recorded.items()) {
            if (!io::file_exists(path)) return false;
            if (io::hex64(io::file_digest(path)) != digest.get<std::string>()) return false;
        }
        return !recorded.empty();
    }

    void record_stage(const std::string& stage, const std::string& command) {
        json artifacts = json::object();
        for (const auto& path : stage_artifacts(paths_, stage)) {
            if (io::file_exists(path)) artifacts[path] = io::hex64(io::file_digest(path));
        }
        j_["stages"][stage] = {{"artifacts", artifacts},
                               {"command", command},
                               {"completed_at", timestamp_utc()}};
        j_["updated_at"] = timestamp_utc();
        io::write_text(paths_.manifest(), j_.dump(2) + "\n");
    }

  private:
    Paths paths_;
    json j_;
};

// Deterministic re-derivation of the dataset + splits from the config.
struct Materialized {
    data::Dataset full;
    data::Splits splits;
    data::Dataset test_eval;  // test split, optionally capped
};

Materialized materialize_data(const RunConfig& cfg) {
    Materialized m;
    if (cfg.data.source == "synthetic") {
        m.full = data::generate_synthetic(cfg.seed, cfg.data.n, cfg.data.classes, cfg.data.size);
    } else {
        m.full = data::load_idx(cfg.data.idx_images, cfg.data.idx_labels);
    }
    m.splits = data::split(m.full, cfg.split_plan());
    const int cap = cfg.eval.max_eval_samples;
    if (cap > 0 && cap < m.splits.test.size()) {
        std::vector<int> idx(static_cast<size_t>(cap));
        std::iota(idx.begin(), idx.end(), 0);
        m.test_eval = m.splits.test.subset(idx);
    } else {
        m.test_eval = m.splits.test;
    }
    return m;
}

void require_artifact(const Paths& p, const std::string& path, const std::string& stage,
                      const std::string& produced_by) {
    if (!io::file_exists(path)) {
        throw IoError(IoError::Kind::open, "stage " + stage + ": missing artifact " + path +
                                               " (run " + produced_by + " first)");
    }
    (void)p;
}

json load_json(const std::string& path) {
    try {
        return json::parse(io::read_text(path));
    } catch (const json::exception& e) {
        throw IoError(IoError::Kind::header, path + ": " + e.what());
    }
}

detector::DetectorConfig detector_config(const RunConfig& cfg, const nn::ModelGraph& m) {
    detector::DetectorConfig dc;
    dc.taps = detector::preset_taps(m, cfg.detector.taps);
    dc.hidden1 = cfg.detector.hidden1;
    dc.hidden2 = cfg.detector.hidden2;
    dc.lr = static_cast<Real>(cfg.detector.lr);
    dc.epochs = cfg.detector.epochs;
    dc.batch = cfg.detector.batch;
    dc.theta = cfg.detector.theta;
    dc.seed = cfg.seed;
    return dc;
}

detector::Threshold load_threshold(const std::string& path) {
    const json j = load_json(path);
    detector::Threshold t;
    try {
        t.h = j.at("h").get<double>();
        t.theta = j.at("theta").get<double>();
        t.calibration_count = j.at("calibration_count").get<int64_t>();
        t.calibration_digest = j.at("calibration_digest").get<std::string>();
    } catch (const json::exception& e) {
        throw IoError(IoError::Kind::header, path + ": " + e.what());
    }
    return t;
}

struct LoadedEvalContext {
    Materialized data;
    nn::ModelGraph model;
    detector::DetectorBundle bundle;
    detector::Threshold threshold;
};

LoadedEvalContext load_eval_context(const RunConfig& cfg, const Paths& p, const std::string& stage) {
    require_artifact(p, p.model(), stage, "train-target");
    require_artifact(p, p.detector(), stage, "train-detector");
    require_artifact(p, p.threshold(), stage, "calibrate");
    LoadedEvalContext ctx;
    ctx.data = materialize_data(cfg);
    ctx.model = nn::load_checkpoint(p.model());
    ctx.bundle = detector::load_detector(p.detector());
    ctx.threshold = load_threshold(p.threshold());
    return ctx;
}

std::optional<double> bench_value(const Paths& p, const char* key) {
    if (!io::file_exists(p.bench())) return std::nullopt;
    const json j = load_json(p.bench());
    if (!j.contains(key)) return std::nullopt;
    return j.at(key).get<double>();
}

// ---------------------------------------------------------------- stages

void stage_synth_data(const RunConfig& cfg, const Paths& p, std::ostream& log) {
    io::write_text(p.config(), cfg.to_json().dump(2) + "\n");
    const auto m = materialize_data(cfg);
    const auto img = m.full.images.data();
    const json manifest = {
        {"provenance", m.full.provenance},
        {"n", m.full.size()},
        {"classes", m.full.classes},
        {"shape", m.full.images.shape()},
        {"images_digest", io::hex64(io::fnv1a64(img.data(), img.size() * sizeof(Real)))},
        {"split_sizes",
         {{"target_train", m.splits.target_train.size()},
          {"detector_train", m.splits.detector_train.size()},
          {"calibration", m.splits.calibration.size()},
          {"test", m.splits.test.size()}}},
    };
    io::write_text(p.dataset_manifest(), manifest.dump(2) + "\n");
    log << "synth-data: " << m.full.size() << " samples, splits " << m.splits.target_train.size()
        << "/" << m.splits.detector_train.size() << "/" << m.splits.calibration.size() << "/"
        << m.splits.test.size() << "\n";
}

void stage_train_target(const RunConfig& cfg, const Paths& p, std::ostream& log) {
    require_artifact(p, p.dataset_manifest(), "train-target", "synth-data");
    auto m = materialize_data(cfg);
    auto model = nn::desk_model(cfg.seed);
    const auto history = nn::train_classifier(model, m.splits.target_train, cfg.model.epochs,
                                              cfg.model.batch, static_cast<Real>(cfg.model.lr),
                                              cfg.seed);
    const double test_acc = nn::evaluate_accuracy(model, m.splits.test);
    model.meta.final_accuracy = test_acc;
    nn::save_checkpoint(model, p.model());
    log << "train-target: " << history.size() << " epochs, train acc "
        << history.back().accuracy << ", test acc " << test_acc << "\n";
}

int stage_attack(const RunConfig& cfg, const Paths& p, std::ostream& log) {
    require_artifact(p, p.model(), "attack", "train-target");
    const auto m = materialize_data(cfg);
    const auto model = nn::load_checkpoint(p.model());
    const auto outcome = attacks::build_adversarial_set(model, m.test_eval, cfg.attack_config());
    attacks::save_adversarial_set(outcome, p.dir);
    log << "attack: " << outcome.adv.size() << " adversarial samples from "
        << outcome.adv.eligible_indices.size() << " eligible\n";
    if (outcome.adv.empty()) {
        log << "attack: empty adversarial set\n";
        return kExitEmptyAdversarialSet;
    }
    return kExitOk;
}

void stage_train_detector(const RunConfig& cfg, const Paths& p, std::ostream& log) {
    require_artifact(p, p.model(), "train-detector", "train-target");
    const auto m = materialize_data(cfg);
    const auto model = nn::load_checkpoint(p.model());
    const auto dc = detector_config(cfg, model);
    auto trained = detector::train_regressor(model, m.splits.detector_train, dc);
    detector::DetectorBundle bundle{dc, std::move(trained.regressor), std::nullopt};
    detector::save_detector(bundle, p.detector());
    log << "train-detector: |v|=" << bundle.regressor.input_dim() << ", final epoch loss "
        << (trained.epoch_loss.empty() ? 0.0 : trained.epoch_loss.back()) << "\n";
}

void stage_calibrate(const RunConfig& cfg, const Paths& p, std::ostream& log) {
    require_artifact(p, p.model(), "calibrate", "train-target");
    require_artifact(p, p.detector(), "calibrate", "train-detector");
    const auto m = materialize_data(cfg);
    const auto model = nn::load_checkpoint(p.model());
    const auto bundle = detector::load_detector(p.detector());
    const auto scores = detector::score(model, bundle.regressor, bundle.config.taps,
                                        m.splits.calibration.images);
    const auto t = detector::calibrate_threshold(scores, cfg.detector.theta);
    const json j = {{"h", t.h},
                    {"theta", t.theta},
                    {"calibration_count", t.calibration_count},
                    {"calibration_digest", t.calibration_digest}};
    io::write_text(p.threshold(), j.dump(2) + "\n");
    log << "calibrate: h=" << t.h << " at theta=" << t.theta << " over " << t.calibration_count
        << " clean scores\n";
}

void stage_bench(const RunConfig& cfg, const Paths& p, std::ostream& log) {
    auto ctx = load_eval_context(cfg, p, "bench");
    const int n = std::min(ctx.data.test_eval.size(), 512);
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    const Tensor samples = data::gather_images(ctx.data.test_eval.images, idx);
    const auto pts = eval::bench_pts(ctx.model, ctx.bundle.regressor, ctx.bundle.config.taps,
                                     samples, cfg.eval.bench_reps);
    const json j = {{"pts_target_s", pts.target_seconds},
                    {"pts_detector_s", pts.detector_seconds},
                    {"repetitions", pts.repetitions},
                    {"samples", n}};
    io::write_text(p.bench(), j.dump(2) + "\n");
    log << "bench: target " << pts.target_seconds << " s/sample, detector " << pts.detector_seconds
        << " s/sample\n";
}

int stage_evaluate(const RunConfig& cfg, const Paths& p, std::ostream& log) {
    auto ctx = load_eval_context(cfg, p, "evaluate");
    require_artifact(p, p.adv_manifest(), "evaluate", "attack");
    const auto outcome = attacks::load_adversarial_set(p.dir, ctx.data.test_eval);

    eval::EvalInputs in;
    in.model = &ctx.model;
    in.regressor = &ctx.bundle.regressor;
    in.taps = ctx.bundle.config.taps;
    in.threshold = ctx.threshold;
    in.test_clean = &ctx.data.test_eval;
    in.run_id = cfg.run_id();

    auto report = eval::evaluate_outcome(in, outcome);
    report.pts_target = bench_value(p, "pts_target_s");
    report.pts_detector = bench_value(p, "pts_detector_s");

    io::write_text(p.report_json(), report.to_json());
    io::write_text(p.report_csv(),
                   eval::EvalReport::csv_header() + "\n" + report.csv_row() + "\n");
    log << "evaluate: auc="
        << (report.auc_value ? std::to_string(*report.auc_value) : std::string("null"))
        << " fpr@h=" << report.fpr_at_h << " tpr@h=" << report.tpr_at_h << "\n";
    if (outcome.adv.empty()) return kExitEmptyAdversarialSet;
    return kExitOk;
}

void write_sweep_outputs(const eval::SweepResult& sweep, const std::string& json_path,
                         const std::string& csv_path, bool labeled_csv) {
    json entries = json::array();
    std::string csv = labeled_csv ? "label," + eval::EvalReport::csv_header()
                                  : eval::EvalReport::csv_header();
    csv += "\n";
    for (const auto& e : sweep.entries) {
        json je = {{"label", e.label}, {"param", e.param}};
        if (e.report) {
            je["auc"] = e.report->auc_value ? json(*e.report->auc_value) : json(nullptr);
            je["report"] = json::parse(e.report->to_json());
        }
        if (!e.error.empty()) je["error"] = e.error;
        entries.push_back(std::move(je));
        if (e.report) {
            if (labeled_csv) csv += e.label + ",";
            csv += e.report->csv_row() + "\n";
        }
    }
    io::write_text(json_path, json{{"entries", entries}}.dump(2) + "\n");
    io::write_text(csv_path, csv);
}

void stage_sweep_eps(const RunConfig& cfg, const Paths& p, std::ostream& log) {
    auto ctx = load_eval_context(cfg, p, "sweep-eps");
    eval::EvalInputs in;
    in.model = &ctx.model;
    in.regressor = &ctx.bundle.regressor;
    in.taps = ctx.bundle.config.taps;
    in.threshold = ctx.threshold;
    in.test_clean = &ctx.data.test_eval;
    in.run_id = cfg.run_id();
    const auto sweep = eval::sweep_epsilon(in, cfg.attack_config(), cfg.sweep.epsilons);
    write_sweep_outputs(sweep, p.sweep_eps_json(), p.sweep_eps_csv(), false);
    for (const auto& e : sweep.entries) {
        log << "sweep-eps " << e.label << ": auc="
            << (e.report && e.report->auc_value ? std::to_string(*e.report->auc_value)
                                                : std::string("null"))
            << "\n";
    }
}

void stage_sweep_taps(const RunConfig& cfg, const Paths& p, std::ostream& log) {
    require_artifact(p, p.model(), "sweep-taps", "train-target");
    eval::TapSweepContext ctx;
    const auto m = materialize_data(cfg);
    const auto model = nn::load_checkpoint(p.model());
    ctx.model = &model;
    ctx.detector_train = &m.splits.detector_train;
    ctx.calibration = &m.splits.calibration;
    ctx.test_clean = &m.test_eval;
    ctx.base_config = detector_config(cfg, model);
    ctx.attack = cfg.attack_config();
    ctx.run_id = cfg.run_id();

    std::vector<std::pair<std::string, std::vector<detector::TapSpec>>> configs;
    for (const auto& name : cfg.sweep.tap_configs) {
        configs.emplace_back(name, detector::preset_taps(model, name));
    }
    const auto sweep = eval::sweep_taps(ctx, configs);
    write_sweep_outputs(sweep, p.sweep_taps_json(), p.sweep_taps_csv(), true);
    for (const auto& e : sweep.entries) {
        log << "sweep-taps " << e.label << ": "
            << (e.report && e.report->auc_value ? "auc=" + std::to_string(*e.report->auc_value)
                                                : "error=" + e.error)
            << "\n";
    }
}

}  // namespace

const std::vector<std::string>& stage_order() {
    static const std::vector<std::string> order = {"synth-data", "train-target",  "attack",
                                                   "train-detector", "calibrate", "bench",
                                                   "evaluate"};
    return order;
}

int run_stage(const RunConfig& cfg, const std::string& stage, const std::string& out_dir,
              std::ostream& log) {
    Paths p{out_dir};
    std::filesystem::create_directories(out_dir);
    try {
        int code = kExitOk;
        if (stage == "synth-data") {
            stage_synth_data(cfg, p, log);
        } else if (stage == "train-target") {
            stage_train_target(cfg, p, log);
        } else if (stage == "attack") {
            code = stage_attack(cfg, p, log);
        } else if (stage == "train-detector") {
            stage_train_detector(cfg, p, log);
        } else if (stage == "calibrate") {
            stage_calibrate(cfg, p, log);
        } else if (stage == "bench") {
            stage_bench(cfg, p, log);
        } else if (stage == "evaluate") {
            code = stage_evaluate(cfg, p, log);
        } else if (stage == "sweep-eps") {
            stage_sweep_eps(cfg, p, log);
        } else if (stage == "sweep-taps") {
            stage_sweep_taps(cfg, p, log);
        } else {
            log << "unknown stage '" << stage << "'\n";
            return kExitConfig;
        }
        if (code == kExitOk || code == kExitEmptyAdversarialSet) {
            Manifest manifest(p, cfg);
            manifest.record_stage(stage, stage);
        }
        return code;
    } catch (const ConfigError& e) {
        log << "stage " << stage << ": " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        log << "stage " << stage << ": " << e.what() << "\n";
        return e.kind == IoError::Kind::open ? kExitMissingArtifact : 1;
    } catch (const Error& e) {
        log << "stage " << stage << ": " << e.what() << "\n";
        return 1;
    }
}

int run_pipeline(const RunConfig& cfg, const std::string& out_dir, std::ostream& log) {
    Paths p{out_dir};
    std::filesystem::create_directories(out_dir);
    for (const auto& stage : stage_order()) {
        if (stage == "bench" && !cfg.eval.bench) continue;
        {
            Manifest manifest(p, cfg);
            if (manifest.stage_current(stage)) {
                log << "pipeline: " << stage << " up to date, skipping\n";
                continue;
            }
        }
        const int code = run_stage(cfg, stage, out_dir, log);
        if (code != kExitOk) {
            log << "pipeline: stage " << stage << " failed with exit code " << code << "\n";
            return code;
        }
    }
    log << "pipeline: complete\n";
    return kExitOk;
}

int merge_reports(const std::vector<std::string>& run_dirs, std::ostream& out, std::ostream& log) {
    if (run_dirs.empty()) {
        log << "report: no run directories given\n";
        return kExitConfig;
    }
    struct Row {
        std::string attack;
        double epsilon;
        std::string text;
    };
    std::vector<Row> rows;
    for (const auto& dir : run_dirs) {
        const std::string path = dir + "/report.csv";
        if (!io::file_exists(path)) {
            log << "report: missing " << path << "\n";
            return kExitMissingArtifact;
        }
        std::istringstream in(io::read_text(path));
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (first) {
                first = false;
                if (line != eval::EvalReport::csv_header()) {
                    log << "report: unexpected header in " << path << "\n";
                    return kExitMissingArtifact;
                }
                continue;
            }
            // columns: run_id,attack,epsilon,...
            const auto c1 = line.find(',');
            const auto c2 = line.find(',', c1 + 1);
            const auto c3 = line.find(',', c2 + 1);
            Row row;
            row.attack = line.substr(c1 + 1, c2 - c1 - 1);
            row.epsilon = std::stod(line.substr(c2 + 1, c3 - c2 - 1));
            row.text = line;
            rows.push_back(std::move(row));
        }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.attack != b.attack) return a.attack < b.attack;
        return a.epsilon < b.epsilon;
    });
    out << eval::EvalReport::csv_header() << "\n";
    for (const auto& row : rows) out << row.text << "\n";
    return kExitOk;
}

}  // namespace lr::cli
