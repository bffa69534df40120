#include "lr/detector.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "lr/io.hpp"
#include "lr/ops.hpp"
#include "lr/optim.hpp"
#include "lr/rng.hpp"

namespace lr::detector {

namespace {

// Resolved index lists per dimension for one tap against one shape.
std::vector<std::vector<int>> resolve_slices(const TapSpec& tap, const Shape& per_sample) {
    if (tap.dims.size() != per_sample.size()) {
        throw TapError("tap '" + tap.layer + "': " + std::to_string(tap.dims.size()) +
                       " slice triples for a " + std::to_string(per_sample.size()) +
                       "-d activation " + shape_str(per_sample));
    }
    std::vector<std::vector<int>> idx(per_sample.size());
    for (size_t d = 0; d < per_sample.size(); ++d) {
        const auto& s = tap.dims[d];
        if (s.step < 1 || s.start < 0 || s.end > per_sample[d] || s.start >= s.end) {
            throw TapError("tap '" + tap.layer + "': slice (" + std::to_string(s.start) + "," +
                           std::to_string(s.end) + "," + std::to_string(s.step) +
                           ") invalid for axis of length " + std::to_string(per_sample[d]));
        }
        for (int i = s.start; i < s.end; i += s.step) idx[d].push_back(i);
    }
    return idx;
}

int64_t count_of(const std::vector<std::vector<int>>& idx) {
    int64_t n = 1;
    for (const auto& v : idx) n *= static_cast<int64_t>(v.size());
    return n;
}

}  // namespace

int64_t tap_count(const TapSpec& tap, const Shape& per_sample_shape) {
    return count_of(resolve_slices(tap, per_sample_shape));
}

Tensor extract_v(const nn::Activations& acts, std::span<const TapSpec> taps) {
    if (taps.empty()) throw TapError("extract_v: no taps");

    struct Resolved {
        const Tensor* value;
        std::vector<std::vector<int>> idx;
        Shape per_sample;
    };
    std::vector<Resolved> resolved;
    int64_t total = 0;
    int batch = -1;
    for (const auto& tap : taps) {
        const int at = acts.index_of(tap.layer);
        if (at < 0) throw TapError("tap names unknown layer '" + tap.layer + "'");
        const Tensor& val = acts.values[static_cast<size_t>(at)];
        if (batch < 0) batch = val.dim(0);
        Shape per_sample(val.shape().begin() + 1, val.shape().end());
        Resolved r{&val, resolve_slices(tap, per_sample), std::move(per_sample)};
        total += count_of(r.idx);
        resolved.push_back(std::move(r));
    }

    Tensor out = Tensor::zeros({batch, static_cast<int>(total)});
    auto od = out.mutable_data();
    for (int b = 0; b < batch; ++b) {
        size_t at = static_cast<size_t>(b) * static_cast<size_t>(total);
        for (const auto& r : resolved) {
            auto src = r.value->data();
            const size_t base = static_cast<size_t>(b) * static_cast<size_t>(numel(r.per_sample));
            // Row-major walk over the sliced index lists.
            const size_t nd = r.idx.size();
            std::vector<size_t> pos(nd, 0);
            std::vector<int64_t> stride(nd, 1);
            for (size_t d = nd; d-- > 1;) {
                stride[d - 1] = stride[d] * r.per_sample[d];
            }
            while (true) {
                int64_t off = 0;
                for (size_t d = 0; d < nd; ++d) off += stride[d] * r.idx[d][pos[d]];
                od[at++] = src[base + static_cast<size_t>(off)];
                size_t d = nd;
                while (d-- > 0) {
                    if (++pos[d] < r.idx[d].size()) break;
                    pos[d] = 0;
                    if (d == 0) goto done_tap;
                }
                if (nd == 0) break;
            }
        done_tap:;
        }
    }
    return out;
}

int64_t v_dim(const nn::ModelGraph& m, std::span<const TapSpec> taps) {
    int64_t total = 0;
    for (const auto& tap : taps) {
        const int at = m.layer_index(tap.layer);
        if (at < 0) throw TapError("tap names unknown layer '" + tap.layer + "'");
        total += tap_count(tap, m.layer_output_shape(at));
    }
    return total;
}

void DetectorConfig::validate(const nn::ModelGraph& m) const {
    if (taps.empty()) throw ConfigError("detector config: taps must be nonempty");
    for (const auto& tap : taps) {
        const int at = m.layer_index(tap.layer);
        if (at < 0) throw TapError("tap names unknown layer '" + tap.layer + "'");
        if (at >= m.feature_index()) {
            throw ConfigError("tap '" + tap.layer + "' is not strictly earlier than the feature layer '" +
                              m.feature_layer_name() + "'");
        }
        tap_count(tap, m.layer_output_shape(at));  // throws TapError when unresolvable
    }
    if (hidden1 < 1 || hidden2 < 1) throw ConfigError("detector config: hidden sizes must be positive");
    if (theta <= 0.0 || theta >= 100.0) throw ConfigError("detector config: theta must lie in (0,100)");
    if (epochs < 0) throw ConfigError("detector config: epochs must be >= 0");
    if (batch < 1) throw ConfigError("detector config: batch must be >= 1");
    if (lr < Real{0}) throw ConfigError("detector config: learning rate must be >= 0");
}

namespace {

TapSpec sliced_tap(const std::string& name, const Shape& per_sample) {
    TapSpec tap;
    tap.layer = name;
    if (per_sample.size() == 3) {
        const int c = std::min(4, per_sample[0]);
        tap.dims.push_back({0, c, 1});
        for (int d = 1; d < 3; ++d) {
            const int len = per_sample[static_cast<size_t>(d)];
            const int half = std::max(1, len / 2);
            const int start = (len - half) / 2;
            tap.dims.push_back({start, start + half, 1});
        }
    } else {
        for (int len : per_sample) tap.dims.push_back({0, len, 1});
    }
    return tap;
}

}  // namespace

std::vector<TapSpec> default_taps(const nn::ModelGraph& m) {
    std::vector<TapSpec> taps;
    const auto& layers = m.layers();
    for (size_t i = 1; i < layers.size() && taps.size() < 2; ++i) {
        if (layers[i].kind == nn::LayerSpec::Kind::relu &&
            layers[i - 1].kind == nn::LayerSpec::Kind::conv3x3 &&
            static_cast<int>(i) < m.feature_index()) {
            taps.push_back(sliced_tap(layers[i].name, m.layer_output_shape(static_cast<int>(i))));
        }
    }
    if (taps.empty()) throw ConfigError("default taps: graph has no conv+relu block before the feature layer");
    return taps;
}

std::vector<TapSpec> preset_taps(const nn::ModelGraph& m, const std::string& name) {
    if (name == "early-mixture") return default_taps(m);
    if (name == "first-layer") {
        return {sliced_tap(m.layers().front().name, m.layer_output_shape(0))};
    }
    if (name == "last-hidden") {
        // Latest layer strictly before the feature layer.
        const int i = m.feature_index() - 1;
        if (i < 0) throw ConfigError("preset taps: no layer before the feature layer");
        TapSpec tap;
        tap.layer = m.layers()[static_cast<size_t>(i)].name;
        for (int len : m.layer_output_shape(i)) tap.dims.push_back({0, len, 1});
        return {tap};
    }
    throw ConfigError("unknown tap preset '" + name + "'");
}

Regressor Regressor::init(int input_dim, int hidden1, int hidden2, int output_dim, uint64_t seed) {
    if (input_dim < 1 || hidden1 < 1 || hidden2 < 1 || output_dim < 1) {
        throw ConfigError("regressor dimensions must be positive");
    }
    Regressor r;
    r.in_ = input_dim;
    r.h1_ = hidden1;
    r.h2_ = hidden2;
    r.out_ = output_dim;
    Rng rng(seed);
    auto make = [&rng](int rows, int cols) {
        const Real bound = static_cast<Real>(std::sqrt(6.0 / rows));
        Tensor w = Tensor::zeros({rows, cols});
        for (Real& v : w.mutable_data()) v = rng.uniform(-bound, bound);
        return w;
    };
    r.params_.push_back(make(input_dim, hidden1));
    r.params_.push_back(Tensor::zeros({hidden1}));
    r.params_.push_back(make(hidden1, hidden2));
    r.params_.push_back(Tensor::zeros({hidden2}));
    r.params_.push_back(make(hidden2, output_dim));
    r.params_.push_back(Tensor::zeros({output_dim}));
    return r;
}

Tensor Regressor::forward(const Tensor& v, Tape* tape) const {
    if (params_.empty()) throw UsageError("regressor is uninitialized");
    if (v.ndim() != 2 || v.dim(1) != in_) {
        throw ShapeError("regressor input " + shape_str(v.shape()) + " does not match input dim " +
                         std::to_string(in_));
    }
    Tensor h = relu(add_row_bias(matmul(v, params_[0], tape), params_[1], tape), tape);
    h = relu(add_row_bias(matmul(h, params_[2], tape), params_[3], tape), tape);
    return add_row_bias(matmul(h, params_[4], tape), params_[5], tape);
}

uint64_t Regressor::params_digest() const {
    uint64_t h = 0xCBF29CE484222325ull;
    for (const Tensor& p : params_) {
        const auto d = p.data();
        h = Rng::mix64(h ^ io::fnv1a64(d.data(), d.size() * sizeof(Real)));
    }
    return h;
}

namespace {

Tensor gather_rows(const Tensor& mat, std::span<const int> idx) {
    const int cols = mat.dim(1);
    Tensor out = Tensor::zeros({static_cast<int>(idx.size()), cols});
    auto src = mat.data();
    auto dst = out.mutable_data();
    for (size_t i = 0; i < idx.size(); ++i) {
        std::memcpy(dst.data() + i * static_cast<size_t>(cols),
                    src.data() + static_cast<size_t>(idx[i]) * cols,
                    static_cast<size_t>(cols) * sizeof(Real));
    }
    return out;
}

// Tap vectors and feature targets for a whole image set, batched.
void collect_features(const nn::ModelGraph& m, const Tensor& images,
                      std::span<const TapSpec> taps, Tensor* v_out, Tensor* f_out) {
    const int n = images.dim(0);
    constexpr int kBatch = 256;
    Tensor v_all, f_all;
    std::vector<int> idx;
    int64_t v_cols = 0, f_cols = 0;
    int row = 0;
    for (int lo = 0; lo < n; lo += kBatch) {
        const int hi = std::min(lo + kBatch, n);
        idx.resize(static_cast<size_t>(hi - lo));
        std::iota(idx.begin(), idx.end(), lo);
        Tensor xb = data::gather_images(images, idx);
        auto [logits, acts] = nn::forward_with_taps(m, xb);
        (void)logits;
        Tensor vb = extract_v(acts, taps);
        const Tensor& fb = acts.values[static_cast<size_t>(m.feature_index())];
        if (!v_all.defined()) {
            v_cols = vb.dim(1);
            f_cols = fb.dim(1);
            v_all = Tensor::zeros({n, static_cast<int>(v_cols)});
            f_all = Tensor::zeros({n, static_cast<int>(f_cols)});
        }
        std::memcpy(v_all.mutable_data().data() + static_cast<size_t>(row) * v_cols,
                    vb.data().data(), static_cast<size_t>(vb.size()) * sizeof(Real));
        std::memcpy(f_all.mutable_data().data() + static_cast<size_t>(row) * f_cols,
                    fb.data().data(), static_cast<size_t>(fb.size()) * sizeof(Real));
        row += hi - lo;
    }
    *v_out = v_all;
    *f_out = f_all;
}

class GradGuard {
  public:
    explicit GradGuard(std::vector<Tensor>& params) : params_(params) {
        for (Tensor& p : params_) p.set_requires_grad(true);
    }
    ~GradGuard() {
        for (Tensor& p : params_) {
            p.set_requires_grad(false);
            p.drop_grad();
        }
    }

  private:
    std::vector<Tensor>& params_;
};

}  // namespace

TrainResult train_regressor(const nn::ModelGraph& m, const data::Dataset& clean,
                            const DetectorConfig& config) {
    if (clean.size() == 0) throw DataError("train_regressor: empty dataset");
    if (clean.provenance.rfind("adversarial", 0) == 0) {
        throw DataError("train_regressor: refusing dataset with adversarial provenance: " +
                        clean.provenance);
    }
    config.validate(m);

    const int64_t in_dim = v_dim(m, config.taps);
    const Shape feat_shape = m.layer_output_shape(m.feature_index());
    const int out_dim = static_cast<int>(numel(feat_shape));

    TrainResult result;
    result.regressor = Regressor::init(static_cast<int>(in_dim), config.hidden1, config.hidden2,
                                       out_dim, Rng::substream(config.seed, 0));
    if (config.epochs == 0) return result;

    Tensor v_all, f_all;
    collect_features(m, clean.images, config.taps, &v_all, &f_all);

    GradGuard guard(result.regressor.params());
    AdamState state(result.regressor.params());
    const AdamConfig adam{config.lr};
    Rng rng(Rng::substream(config.seed, 1));

    const int n = clean.size();
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int e = 0; e < config.epochs; ++e) {
        rng.shuffle(order);
        double loss_acc = 0.0;
        for (int lo = 0; lo < n; lo += config.batch) {
            const int hi = std::min(lo + config.batch, n);
            const std::span<const int> idx(order.data() + lo, static_cast<size_t>(hi - lo));
            Tensor vb = gather_rows(v_all, idx);
            Tensor fb = gather_rows(f_all, idx);
            Tape tape;
            Tensor pred = result.regressor.forward(vb, &tape);
            Tensor loss = mse_loss(pred, fb, &tape);
            tape.backward(loss);
            adam_step(result.regressor.params(), state, adam);
            loss_acc += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
        }
        result.epoch_loss.push_back(loss_acc / n);
    }
    result.regressor.epochs_trained += config.epochs;
    return result;
}

std::vector<double> score(const nn::ModelGraph& m, const Regressor& regressor,
                          std::span<const TapSpec> taps, const Tensor& x) {
    const int n = x.dim(0);
    constexpr int kBatch = 256;
    std::vector<double> out;
    out.reserve(static_cast<size_t>(n));
    std::vector<int> idx;
    for (int lo = 0; lo < n; lo += kBatch) {
        const int hi = std::min(lo + kBatch, n);
        idx.resize(static_cast<size_t>(hi - lo));
        std::iota(idx.begin(), idx.end(), lo);
        Tensor xb = data::gather_images(x, idx);
        auto [logits, acts] = nn::forward_with_taps(m, xb);
        (void)logits;
        Tensor vb = extract_v(acts, taps);
        Tensor pred = regressor.forward(vb);
        const Tensor& fb = acts.values[static_cast<size_t>(m.feature_index())];
        const auto batch_scores = mse_per_sample(pred, fb);
        out.insert(out.end(), batch_scores.begin(), batch_scores.end());
    }
    return out;
}

Threshold calibrate_threshold(std::span<const double> clean_scores, double theta) {
    const int64_t k = static_cast<int64_t>(clean_scores.size());
    if (k < 20) {
        throw CalibrationError("calibration needs at least 20 scores, got " + std::to_string(k));
    }
    if (theta <= 0.0 || theta >= 100.0) {
        throw ConfigError("theta must lie in (0,100), got " + std::to_string(theta));
    }
    std::vector<double> sorted(clean_scores.begin(), clean_scores.end());
    std::sort(sorted.begin(), sorted.end());
    int64_t rank = static_cast<int64_t>(std::floor(static_cast<double>(k) * theta / 100.0));
    if (rank < 1) rank = 1;  // degenerate floor index selects the smallest score
    Threshold t;
    t.h = sorted[static_cast<size_t>(rank - 1)];
    t.theta = theta;
    t.calibration_count = k;
    t.calibration_digest = io::hex64(io::fnv1a64(sorted.data(), sorted.size() * sizeof(double)));
    return t;
}

Verdict detect(double score_value, const Threshold& threshold) {
    return score_value > threshold.h ? Verdict::adversarial : Verdict::clean;
}

void save_detector(const DetectorBundle& bundle, const std::string& path) {
    nlohmann::json taps = nlohmann::json::array();
    for (const auto& tap : bundle.config.taps) {
        nlohmann::json dims = nlohmann::json::array();
        for (const auto& s : tap.dims) dims.push_back({s.start, s.end, s.step});
        taps.push_back({{"layer", tap.layer}, {"dims", dims}});
    }
    int64_t total = 0;
    for (const auto& p : bundle.regressor.params()) total += p.size();
    nlohmann::json header = {
        {"kind", "detector"},
        {"blob_len", total},
        {"taps", taps},
        {"hidden", {bundle.regressor.hidden1(), bundle.regressor.hidden2()}},
        {"input_dim", bundle.regressor.input_dim()},
        {"output_dim", bundle.regressor.output_dim()},
        {"lr", bundle.config.lr},
        {"epochs", bundle.config.epochs},
        {"batch", bundle.config.batch},
        {"theta", bundle.config.theta},
        {"seed", bundle.config.seed},
        {"epochs_trained", bundle.regressor.epochs_trained},
    };
    if (bundle.threshold) {
        header["threshold"] = {{"h", bundle.threshold->h},
                               {"theta", bundle.threshold->theta},
                               {"calibration_count", bundle.threshold->calibration_count},
                               {"calibration_digest", bundle.threshold->calibration_digest}};
    }
    std::vector<float> blob;
    blob.reserve(static_cast<size_t>(total));
    for (const auto& p : bundle.regressor.params()) {
        blob.insert(blob.end(), p.data().begin(), p.data().end());
    }
    io::write_container(path, header.dump(), blob);
}

DetectorBundle load_detector(const std::string& path) {
    const auto c = io::read_container(path);
    try {
        const auto header = nlohmann::json::parse(c.header_json);
        if (header.at("kind").get<std::string>() != "detector") {
            throw IoError(IoError::Kind::header, path + ": not a detector checkpoint");
        }
        DetectorBundle b;
        for (const auto& jt : header.at("taps")) {
            TapSpec tap;
            tap.layer = jt.at("layer").get<std::string>();
            for (const auto& jd : jt.at("dims")) {
                tap.dims.push_back({jd.at(0).get<int>(), jd.at(1).get<int>(), jd.at(2).get<int>()});
            }
            b.config.taps.push_back(std::move(tap));
        }
        const auto hidden = header.at("hidden").get<std::vector<int>>();
        b.config.hidden1 = hidden.at(0);
        b.config.hidden2 = hidden.at(1);
        b.config.lr = header.at("lr").get<Real>();
        b.config.epochs = header.at("epochs").get<int>();
        b.config.batch = header.at("batch").get<int>();
        b.config.theta = header.at("theta").get<double>();
        b.config.seed = header.at("seed").get<uint64_t>();

        b.regressor = Regressor::init(header.at("input_dim").get<int>(), b.config.hidden1,
                                      b.config.hidden2, header.at("output_dim").get<int>(),
                                      Rng::substream(b.config.seed, 0));
        b.regressor.epochs_trained = header.at("epochs_trained").get<int>();
        int64_t total = 0;
        for (const auto& p : b.regressor.params()) total += p.size();
        if (total != static_cast<int64_t>(c.blob.size())) {
            throw IoError(IoError::Kind::consistency,
                          path + ": regressor wants " + std::to_string(total) +
                              " parameters, blob has " + std::to_string(c.blob.size()));
        }
        size_t off = 0;
        for (auto& p : b.regressor.params()) {
            auto dst = p.mutable_data();
            std::copy(c.blob.begin() + static_cast<std::ptrdiff_t>(off),
                      c.blob.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
            off += dst.size();
        }
        if (header.contains("threshold")) {
            const auto& jt = header.at("threshold");
            Threshold t;
            t.h = jt.at("h").get<double>();
            t.theta = jt.at("theta").get<double>();
            t.calibration_count = jt.at("calibration_count").get<int64_t>();
            t.calibration_digest = jt.at("calibration_digest").get<std::string>();
            b.threshold = t;
        }
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::header, path + ": bad detector header: " + e.what());
    }
}

}  // namespace lr::detector
