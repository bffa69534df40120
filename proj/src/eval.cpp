#include "lr/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "lr/io.hpp"
#include "lr/ops.hpp"

namespace lr::eval {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

}  // namespace

double RocCurve::trapezoid_area() const {
    double area = 0.0;
    for (size_t i = 1; i < points.size(); ++i) {
        area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) * 0.5;
    }
    return area;
}

double auc(std::span<const double> clean, std::span<const double> adversarial) {
    if (clean.empty() || adversarial.empty()) {
        throw ConfigError("auc: both score lists must be nonempty");
    }
    // Rank-sum with average ranks for ties: exact half credit per tied pair.
    struct Tagged {
        double score;
        bool adv;
    };
    std::vector<Tagged> all;
    all.reserve(clean.size() + adversarial.size());
    for (double s : clean) all.push_back({s, false});
    for (double s : adversarial) all.push_back({s, true});
    std::sort(all.begin(), all.end(), [](const Tagged& a, const Tagged& b) { return a.score < b.score; });

    const double na = static_cast<double>(adversarial.size());
    const double nc = static_cast<double>(clean.size());
    double rank_sum_adv = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        // 1-based ranks i+1 .. j share the average rank.
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (size_t k = i; k < j; ++k) {
            if (all[k].adv) rank_sum_adv += avg_rank;
        }
        i = j;
    }
    return (rank_sum_adv - na * (na + 1.0) / 2.0) / (na * nc);
}

RocCurve roc_curve(std::span<const double> clean, std::span<const double> adversarial) {
    if (clean.empty() || adversarial.empty()) {
        throw ConfigError("roc_curve: both score lists must be nonempty");
    }
    std::vector<double> cs(clean.begin(), clean.end());
    std::vector<double> as(adversarial.begin(), adversarial.end());
    std::sort(cs.begin(), cs.end(), std::greater<>());
    std::sort(as.begin(), as.end(), std::greater<>());

    RocCurve curve;
    curve.points.push_back({0.0, 0.0});
    size_t ci = 0, ai = 0;
    const double nc = static_cast<double>(cs.size());
    const double na = static_cast<double>(as.size());
    while (ci < cs.size() || ai < as.size()) {
        double s;
        if (ci < cs.size() && ai < as.size()) {
            s = std::max(cs[ci], as[ai]);
        } else if (ci < cs.size()) {
            s = cs[ci];
        } else {
            s = as[ai];
        }
        while (ci < cs.size() && cs[ci] == s) ++ci;
        while (ai < as.size() && as[ai] == s) ++ai;
        curve.points.push_back({static_cast<double>(ci) / nc, static_cast<double>(ai) / na});
    }
    curve.points.push_back({1.0, 1.0});
    return curve;
}

Stats make_stats(std::span<const double> values) {
    Stats s;
    s.count = static_cast<int64_t>(values.size());
    if (values.empty()) return s;
    double acc = 0.0;
    for (double v : values) acc += v;
    s.mean = acc / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = values.size() > 1 ? std::sqrt(sq / static_cast<double>(values.size() - 1)) : 0.0;
    return s;
}

double normalized_shift(std::span<const Real> a, std::span<const Real> b) {
    if (a.size() != b.size()) throw ShapeError("normalized_shift: length mismatch");
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        diff += d * d;
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    const double denom = std::sqrt(na) + std::sqrt(nb);
    if (denom == 0.0) return -1.0;
    return std::sqrt(diff) / denom;
}

ShiftStats layer_shift_stats(const nn::ModelGraph& m, const Tensor& clean_images,
                             const Tensor& adv_images, const std::string& first_layer,
                             const std::string& feature_layer) {
    if (clean_images.dim(0) != adv_images.dim(0)) {
        throw ShapeError("layer_shift_stats: sample counts differ");
    }
    const int n = clean_images.dim(0);
    ShiftStats out;
    constexpr int kBatch = 128;
    std::vector<int> idx;
    for (int lo = 0; lo < n; lo += kBatch) {
        const int hi = std::min(lo + kBatch, n);
        idx.resize(static_cast<size_t>(hi - lo));
        std::iota(idx.begin(), idx.end(), lo);
        Tensor xc = data::gather_images(clean_images, idx);
        Tensor xa = data::gather_images(adv_images, idx);
        auto [lc, ac] = nn::forward_with_taps(m, xc);
        auto [la, aa] = nn::forward_with_taps(m, xa);
        (void)lc;
        (void)la;
        const Tensor& fc = ac.by_name(first_layer);
        const Tensor& fa = aa.by_name(first_layer);
        const Tensor& gc = ac.by_name(feature_layer);
        const Tensor& ga = aa.by_name(feature_layer);
        const int64_t fstride = fc.size() / fc.dim(0);
        const int64_t gstride = gc.size() / gc.dim(0);
        for (int b = 0; b < hi - lo; ++b) {
            auto f1 = fc.data().subspan(static_cast<size_t>(b) * fstride, static_cast<size_t>(fstride));
            auto f2 = fa.data().subspan(static_cast<size_t>(b) * fstride, static_cast<size_t>(fstride));
            auto g1 = gc.data().subspan(static_cast<size_t>(b) * gstride, static_cast<size_t>(gstride));
            auto g2 = ga.data().subspan(static_cast<size_t>(b) * gstride, static_cast<size_t>(gstride));
            const double d_first = normalized_shift(f2, f1);
            const double d_feat = normalized_shift(g2, g1);
            if (d_first < 0.0 || d_feat < 0.0) {
                ++out.skipped;
                continue;
            }
            out.first_per_sample.push_back(d_first);
            out.feature_per_sample.push_back(d_feat);
        }
    }
    out.first = make_stats(out.first_per_sample);
    out.feature = make_stats(out.feature_per_sample);
    return out;
}

ErrorGapStats error_gap_stats(std::span<const double> clean_scores,
                              std::span<const double> adv_scores) {
    ErrorGapStats out;
    out.clean = make_stats(clean_scores);
    out.adversarial = make_stats(adv_scores);
    out.gap = out.adversarial.mean - out.clean.mean;
    return out;
}

PtsResult bench_pts(const nn::ModelGraph& m, const detector::Regressor& regressor,
                    std::span<const detector::TapSpec> taps, const Tensor& samples,
                    int repetitions) {
    if (repetitions < 3) throw ConfigError("bench_pts: repetitions must be >= 3");
    const int n = samples.dim(0);
    if (n < 1) throw DataError("bench_pts: no samples");
    constexpr int kBatch = 64;
    using Clock = std::chrono::steady_clock;

    std::vector<int> idx;
    auto for_batches = [&](auto&& fn) {
        for (int lo = 0; lo < n; lo += kBatch) {
            const int hi = std::min(lo + kBatch, n);
            idx.resize(static_cast<size_t>(hi - lo));
            std::iota(idx.begin(), idx.end(), lo);
            Tensor xb = data::gather_images(samples, idx);
            fn(xb);
        }
    };

    // Warm-up pass.
    for_batches([&](const Tensor& xb) {
        auto [logits, acts] = nn::forward_with_taps(m, xb);
        (void)logits;
        Tensor v = detector::extract_v(acts, taps);
        Tensor pred = regressor.forward(v);
        (void)mse_per_sample(pred, acts.values[static_cast<size_t>(m.feature_index())]);
    });

    std::vector<double> target_times, det_times;
    for (int rep = 0; rep < repetitions; ++rep) {
        const auto t0 = Clock::now();
        for_batches([&](const Tensor& xb) { (void)nn::forward(m, xb); });
        const auto t1 = Clock::now();
        target_times.push_back(std::chrono::duration<double>(t1 - t0).count());

        double det_acc = 0.0;
        for_batches([&](const Tensor& xb) {
            auto [logits, acts] = nn::forward_with_taps(m, xb);
            (void)logits;
            const auto d0 = Clock::now();
            Tensor v = detector::extract_v(acts, taps);
            Tensor pred = regressor.forward(v);
            (void)mse_per_sample(pred, acts.values[static_cast<size_t>(m.feature_index())]);
            const auto d1 = Clock::now();
            det_acc += std::chrono::duration<double>(d1 - d0).count();
        });
        det_times.push_back(det_acc);
    }
    auto median = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    PtsResult out;
    out.target_seconds = median(target_times) / n;
    out.detector_seconds = median(det_times) / n;
    out.repetitions = repetitions;
    return out;
}

namespace {

nlohmann::json stats_json(const Stats& s) {
    return {{"mean", s.mean}, {"std", s.stddev}, {"count", s.count}};
}

nlohmann::json attack_json(const attacks::AttackConfig& a) {
    return {{"kind", attacks::AttackConfig::kind_name(a.kind)},
            {"epsilon", a.epsilon},
            {"alpha", a.alpha},
            {"iters", a.iters},
            {"random_start", a.random_start},
            {"seed", a.seed}};
}

}  // namespace

std::string EvalReport::to_json() const {
    nlohmann::json roc_points = nlohmann::json::array();
    for (const auto& p : roc.points) roc_points.push_back({p.fpr, p.tpr});
    nlohmann::json j = {
        {"run_id", run_id},
        {"model_digest", model_digest},
        {"detector_digest", detector_digest},
        {"attack", attack_json(attack)},
        {"auc", auc_value ? nlohmann::json(*auc_value) : nlohmann::json(nullptr)},
        {"roc", roc_points},
        {"shift", {{"first", stats_json(d1)}, {"feature", stats_json(dn1)}, {"skipped", shift_skipped}}},
        {"error", {{"clean", stats_json(ec)}, {"adversarial", stats_json(ea)}, {"gap", gap}}},
        {"threshold", {{"theta", theta}, {"h", h}, {"fpr_at_h", fpr_at_h}, {"tpr_at_h", tpr_at_h}}},
        {"timing",
         {{"pts_target_s", pts_target ? nlohmann::json(*pts_target) : nlohmann::json(nullptr)},
          {"pts_detector_s", pts_detector ? nlohmann::json(*pts_detector) : nlohmann::json(nullptr)}}},
        {"counts", {{"n_clean", n_clean}, {"n_adv", n_adv}, {"n_eligible", n_eligible}}},
    };
    return j.dump(2) + "\n";
}

std::string EvalReport::csv_header() {
    return "run_id,attack,epsilon,auc,theta,h,fpr_at_h,tpr_at_h,mean_ec,std_ec,mean_ea,std_ea,"
           "d1_mean,dn1_mean,pts_target_s,pts_detector_s,n_clean,n_adv";
}

std::string EvalReport::csv_row() const {
    std::string row;
    row += run_id;
    row += ',';
    row += attacks::AttackConfig::kind_name(attack.kind);
    row += ',';
    row += fmt_double(attack.epsilon);
    row += ',';
    row += fmt_opt(auc_value);
    row += ',';
    row += fmt_double(theta);
    row += ',';
    row += fmt_double(h);
    row += ',';
    row += fmt_double(fpr_at_h);
    row += ',';
    row += fmt_double(tpr_at_h);
    row += ',';
    row += fmt_double(ec.mean);
    row += ',';
    row += fmt_double(ec.stddev);
    row += ',';
    row += fmt_double(ea.mean);
    row += ',';
    row += fmt_double(ea.stddev);
    row += ',';
    row += fmt_double(d1.mean);
    row += ',';
    row += fmt_double(dn1.mean);
    row += ',';
    row += fmt_opt(pts_target);
    row += ',';
    row += fmt_opt(pts_detector);
    row += ',';
    row += std::to_string(n_clean);
    row += ',';
    row += std::to_string(n_adv);
    return row;
}

// Assembles the report for an already-built adversarial set.
EvalReport evaluate_outcome(const EvalInputs& in, const attacks::AttackOutcome& outcome) {
    const auto& m = *in.model;
    EvalReport rep;
    rep.run_id = in.run_id;
    rep.model_digest = io::hex64(m.params_digest());
    rep.detector_digest = io::hex64(in.regressor->params_digest());
    rep.attack = outcome.adv.config;
    rep.theta = in.threshold.theta;
    rep.h = in.threshold.h;
    rep.n_eligible = static_cast<int>(outcome.adv.eligible_indices.size());

    const auto clean_scores_all =
        detector::score(m, *in.regressor, in.taps, in.test_clean->images);
    int64_t fp = 0;
    for (double s : clean_scores_all) {
        if (detector::detect(s, in.threshold) == detector::Verdict::adversarial) ++fp;
    }
    rep.fpr_at_h = static_cast<double>(fp) / static_cast<double>(clean_scores_all.size());

    if (outcome.adv.empty()) {
        rep.ec = make_stats(clean_scores_all);
        return rep;
    }

    std::vector<double> matched_clean;
    matched_clean.reserve(outcome.adv.original_indices.size());
    for (int i : outcome.adv.original_indices) {
        matched_clean.push_back(clean_scores_all[static_cast<size_t>(i)]);
    }
    const auto adv_scores = detector::score(m, *in.regressor, in.taps, outcome.adv.images);

    rep.auc_value = auc(matched_clean, adv_scores);
    rep.roc = roc_curve(matched_clean, adv_scores);
    const auto gap_stats = error_gap_stats(matched_clean, adv_scores);
    rep.ec = gap_stats.clean;
    rep.ea = gap_stats.adversarial;
    rep.gap = gap_stats.gap;

    int64_t tp = 0;
    for (double s : adv_scores) {
        if (detector::detect(s, in.threshold) == detector::Verdict::adversarial) ++tp;
    }
    rep.tpr_at_h = static_cast<double>(tp) / static_cast<double>(adv_scores.size());

    const auto shifts = layer_shift_stats(m, outcome.matched_clean.images, outcome.adv.images,
                                          m.layers().front().name, m.feature_layer_name());
    rep.d1 = shifts.first;
    rep.dn1 = shifts.feature;
    rep.shift_skipped = shifts.skipped;

    rep.n_clean = static_cast<int>(matched_clean.size());
    rep.n_adv = static_cast<int>(adv_scores.size());
    return rep;
}

EvalReport evaluate_attack(const EvalInputs& in, const attacks::AttackConfig& attack) {
    const auto outcome = attacks::build_adversarial_set(*in.model, *in.test_clean, attack);
    return evaluate_outcome(in, outcome);
}

SweepResult sweep_epsilon(const EvalInputs& in, const attacks::AttackConfig& base,
                          std::span<const double> epsilons) {
    if (epsilons.empty()) throw ConfigError("sweep_epsilon: empty epsilon list");
    for (size_t i = 0; i < epsilons.size(); ++i) {
        if (epsilons[i] <= 0.0 || epsilons[i] > 1.0) {
            throw ConfigError("sweep_epsilon: epsilon must lie in (0,1]");
        }
        if (i > 0 && epsilons[i] <= epsilons[i - 1]) {
            throw ConfigError("sweep_epsilon: epsilons must be strictly increasing");
        }
    }
    SweepResult out;
    for (double eps : epsilons) {
        attacks::AttackConfig cfg = base;
        cfg.epsilon = static_cast<Real>(eps);
        SweepEntry entry;
        entry.param = eps;
        entry.label = "eps=" + fmt_double(eps);
        entry.report = evaluate_attack(in, cfg);
        if (!entry.report->auc_value) entry.error = "empty adversarial set";
        out.entries.push_back(std::move(entry));
    }
    return out;
}

SweepResult sweep_taps(const TapSweepContext& ctx,
                       const std::vector<std::pair<std::string, std::vector<detector::TapSpec>>>& configs) {
    if (configs.empty()) throw ConfigError("sweep_taps: no configurations");
    for (size_t i = 0; i < configs.size(); ++i) {
        for (size_t j = i + 1; j < configs.size(); ++j) {
            if (configs[i].first == configs[j].first) {
                throw ConfigError("sweep_taps: duplicate configuration label '" + configs[i].first + "'");
            }
        }
    }

    const auto outcome = attacks::build_adversarial_set(*ctx.model, *ctx.test_clean, ctx.attack);

    SweepResult out;
    for (const auto& [label, taps] : configs) {
        SweepEntry entry;
        entry.label = label;
        try {
            detector::DetectorConfig cfg = ctx.base_config;
            cfg.taps = taps;
            const auto trained = detector::train_regressor(*ctx.model, *ctx.detector_train, cfg);
            const auto cal_scores = detector::score(*ctx.model, trained.regressor, cfg.taps,
                                                    ctx.calibration->images);
            const auto threshold = detector::calibrate_threshold(cal_scores, cfg.theta);
            EvalInputs in;
            in.model = ctx.model;
            in.regressor = &trained.regressor;
            in.taps = cfg.taps;
            in.threshold = threshold;
            in.test_clean = ctx.test_clean;
            in.run_id = ctx.run_id;
            entry.report = evaluate_outcome(in, outcome);
            if (!entry.report->auc_value) entry.error = "empty adversarial set";
        } catch (const Error& e) {
            entry.error = e.what();
        }
        out.entries.push_back(std::move(entry));
    }
    return out;
}

}  // namespace lr::eval
