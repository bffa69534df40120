#include "lr/attacks.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lr/io.hpp"
#include "lr/ops.hpp"
#include "lr/rng.hpp"
#include "lr/tape.hpp"

namespace lr::attacks {

void AttackConfig::validate() const {
    if (epsilon < Real{0} || epsilon > Real{1}) {
        throw ConfigError("attack epsilon must lie in [0,1], got " + std::to_string(epsilon));
    }
    if (iters < 1) throw ConfigError("attack iters must be >= 1");
    if (kind == Kind::fgsm && (iters != 1 || random_start)) {
        throw ConfigError("fgsm implies iters == 1 and no random start");
    }
    if (epsilon > Real{0} && effective_alpha() <= Real{0}) {
        throw ConfigError("attack alpha must be positive");
    }
}

AttackConfig::Kind AttackConfig::kind_from_name(const std::string& s) {
    if (s == "fgsm") return Kind::fgsm;
    if (s == "bim") return Kind::bim;
    if (s == "pgd") return Kind::pgd;
    throw ConfigError("unknown attack kind '" + s + "'");
}

const char* AttackConfig::kind_name(Kind k) {
    switch (k) {
        case Kind::fgsm: return "fgsm";
        case Kind::bim: return "bim";
        case Kind::pgd: return "pgd";
    }
    return "?";
}

namespace {

inline Real sign0(Real v) {
    if (v > Real{0}) return Real{1};
    if (v < Real{0}) return Real{-1};
    return Real{0};
}

// Gradient of the mean cross-entropy w.r.t. the input pixels. Model
// parameters are left out of the differentiation set.
Tensor input_gradient(const nn::ModelGraph& m, const Tensor& x, const std::vector<int>& y) {
    Tensor leaf = x.clone();
    leaf.set_requires_grad(true);
    Tape tape;
    Tensor logits = nn::forward(m, leaf, &tape);
    Tensor loss = softmax_cross_entropy(logits, y, &tape);
    tape.backward(loss);
    auto g = leaf.grad();
    return Tensor::from_data(x.shape(), std::vector<Real>(g.begin(), g.end()));
}

// One projected step from `cur`, anchored at `origin`.
Tensor signed_step(const Tensor& cur, const Tensor& grad, const Tensor& origin, Real alpha,
                   Real epsilon) {
    Tensor out = Tensor::zeros(cur.shape());
    auto cd = cur.data();
    auto gd = grad.data();
    auto od = origin.data();
    auto rd = out.mutable_data();
    for (size_t i = 0; i < cd.size(); ++i) {
        Real v = cd[i] + alpha * sign0(gd[i]);
        v = std::clamp(v, od[i] - epsilon, od[i] + epsilon);
        rd[i] = std::clamp(v, Real{0}, Real{1});
    }
    return out;
}

}  // namespace

Tensor attack_iterative(const nn::ModelGraph& m, const Tensor& x, const std::vector<int>& y,
                        const AttackConfig& config, std::span<const int> sample_keys) {
    config.validate();
    if (x.ndim() != 4) throw ShapeError("attack input must be [N,C,H,W], got " + shape_str(x.shape()));
    const int batch = x.dim(0);
    if (static_cast<int>(y.size()) != batch) {
        throw ShapeError("attack: " + std::to_string(y.size()) + " labels for batch " +
                         std::to_string(batch));
    }
    if (!sample_keys.empty() && static_cast<int>(sample_keys.size()) != batch) {
        throw ShapeError("attack: sample_keys size mismatch");
    }
    if (config.epsilon == Real{0}) return x.clone();

    const Real eps = config.epsilon;
    const Real alpha = config.effective_alpha();
    const int64_t per_sample = x.size() / batch;

    Tensor cur = x.clone();
    if (config.random_start) {
        auto cd = cur.mutable_data();
        auto xd = x.data();
        for (int i = 0; i < batch; ++i) {
            const uint64_t key = sample_keys.empty() ? static_cast<uint64_t>(i)
                                                     : static_cast<uint64_t>(sample_keys[i]);
            Rng rng(Rng::substream(config.seed, key));
            for (int64_t j = 0; j < per_sample; ++j) {
                const size_t at = static_cast<size_t>(i) * per_sample + j;
                cd[at] = std::clamp(xd[at] + rng.uniform(-eps, eps), Real{0}, Real{1});
            }
        }
    }

    for (int it = 0; it < config.iters; ++it) {
        const Tensor grad = input_gradient(m, cur, y);
        cur = signed_step(cur, grad, x, alpha, eps);
    }
    return cur;
}

Tensor attack_fgsm(const nn::ModelGraph& m, const Tensor& x, const std::vector<int>& y,
                   Real epsilon) {
    AttackConfig cfg;
    cfg.kind = AttackConfig::Kind::fgsm;
    cfg.epsilon = epsilon;
    cfg.alpha = epsilon;
    cfg.iters = 1;
    cfg.random_start = false;
    return attack_iterative(m, x, y, cfg);
}

AttackOutcome build_adversarial_set(const nn::ModelGraph& m, const data::Dataset& clean,
                                    const AttackConfig& config) {
    config.validate();
    if (clean.size() == 0) throw DataError("build_adversarial_set: empty clean set");

    const auto pred = nn::predict(m, clean.images);
    std::vector<int> eligible;
    for (int i = 0; i < clean.size(); ++i) {
        if (pred[static_cast<size_t>(i)] == clean.labels[static_cast<size_t>(i)]) {
            eligible.push_back(i);
        }
    }

    AttackOutcome out;
    out.adv.config = config;
    out.adv.eligible_indices = eligible;
    out.adv.success.assign(eligible.size(), 0);
    out.matched_clean.classes = clean.classes;
    out.matched_clean.provenance = clean.provenance;

    if (eligible.empty()) return out;

    constexpr int kBatch = 128;
    std::vector<Tensor> kept_slabs;
    std::vector<int> kept_indices;
    for (size_t lo = 0; lo < eligible.size(); lo += kBatch) {
        const size_t hi = std::min(lo + kBatch, eligible.size());
        const std::span<const int> idx(eligible.data() + lo, hi - lo);
        Tensor xb = data::gather_images(clean.images, idx);
        std::vector<int> yb;
        yb.reserve(idx.size());
        for (int j : idx) yb.push_back(clean.labels[static_cast<size_t>(j)]);

        Tensor xadv = attack_iterative(m, xb, yb, config, idx);
        const auto pred_adv = argmax_rows(nn::forward(m, xadv));

        const int64_t stride = xadv.size() / xadv.dim(0);
        for (size_t j = 0; j < idx.size(); ++j) {
            if (pred_adv[j] != yb[j]) {
                out.adv.success[lo + j] = 1;
                kept_indices.push_back(idx[j]);
                auto src = xadv.data();
                std::vector<Real> one(src.begin() + static_cast<std::ptrdiff_t>(j * stride),
                                      src.begin() + static_cast<std::ptrdiff_t>((j + 1) * stride));
                Shape s = xadv.shape();
                s[0] = 1;
                kept_slabs.push_back(Tensor::from_data(s, std::move(one)));
            }
        }
    }

    if (!kept_indices.empty()) {
        Shape s = clean.images.shape();
        s[0] = static_cast<int>(kept_indices.size());
        Tensor all = Tensor::zeros(s);
        auto dst = all.mutable_data();
        const int64_t stride = all.size() / all.dim(0);
        for (size_t j = 0; j < kept_slabs.size(); ++j) {
            auto src = kept_slabs[j].data();
            std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(j * stride));
        }
        out.adv.images = all;
        out.adv.original_indices = kept_indices;
        for (int j : kept_indices) out.adv.labels.push_back(clean.labels[static_cast<size_t>(j)]);
        out.matched_clean = clean.subset(kept_indices);
    }
    return out;
}

data::Dataset to_dataset(const AdversarialSet& adv, const data::Dataset& source) {
    if (adv.empty()) throw DataError("adversarial set is empty");
    data::Dataset ds;
    ds.images = adv.images;
    ds.labels = adv.labels;
    ds.classes = source.classes;
    ds.provenance = std::string("adversarial:kind=") + AttackConfig::kind_name(adv.config.kind) +
                    ",eps=" + std::to_string(adv.config.epsilon) + ",source={" + source.provenance +
                    "}";
    return ds;
}

void save_adversarial_set(const AttackOutcome& outcome, const std::string& dir) {
    const auto& adv = outcome.adv;
    const std::string blob_path = dir + "/adv_images.bin";
    size_t blob_bytes = 0;
    if (!adv.empty()) {
        auto d = adv.images.data();
        blob_bytes = d.size() * sizeof(Real);
        io::write_file(blob_path, d.data(), blob_bytes);
    } else {
        io::write_file(blob_path, "", 0);
    }

    nlohmann::json manifest = {
        {"config",
         {{"kind", AttackConfig::kind_name(adv.config.kind)},
          {"epsilon", adv.config.epsilon},
          {"alpha", adv.config.alpha},
          {"iters", adv.config.iters},
          {"random_start", adv.config.random_start},
          {"seed", adv.config.seed}}},
        {"count", adv.size()},
        {"shape", adv.empty() ? Shape{} : adv.images.shape()},
        {"original_indices", adv.original_indices},
        {"labels", adv.labels},
        {"eligible_indices", adv.eligible_indices},
        {"success", adv.success},
        {"images_digest", io::hex64(io::file_digest(blob_path))},
    };
    io::write_text(dir + "/adv_manifest.json", manifest.dump(2) + "\n");
}

AttackOutcome load_adversarial_set(const std::string& dir, const data::Dataset& source) {
    const std::string manifest_path = dir + "/adv_manifest.json";
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_text(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::header, manifest_path + ": " + e.what());
    }

    AttackOutcome out;
    try {
        const auto& jc = manifest.at("config");
        out.adv.config.kind = AttackConfig::kind_from_name(jc.at("kind").get<std::string>());
        out.adv.config.epsilon = jc.at("epsilon").get<Real>();
        out.adv.config.alpha = jc.at("alpha").get<Real>();
        out.adv.config.iters = jc.at("iters").get<int>();
        out.adv.config.random_start = jc.at("random_start").get<bool>();
        out.adv.config.seed = jc.at("seed").get<uint64_t>();
        out.adv.original_indices = manifest.at("original_indices").get<std::vector<int>>();
        out.adv.labels = manifest.at("labels").get<std::vector<int>>();
        out.adv.eligible_indices = manifest.at("eligible_indices").get<std::vector<int>>();
        out.adv.success = manifest.at("success").get<std::vector<uint8_t>>();
        const int count = manifest.at("count").get<int>();
        if (count > 0) {
            const Shape shape = manifest.at("shape").get<Shape>();
            const auto bytes = io::read_file(dir + "/adv_images.bin");
            if (bytes.size() != static_cast<size_t>(numel(shape)) * sizeof(Real)) {
                throw IoError(IoError::Kind::consistency,
                              dir + ": adversarial blob size does not match manifest shape");
            }
            std::vector<Real> vals(static_cast<size_t>(numel(shape)));
            std::memcpy(vals.data(), bytes.data(), bytes.size());
            out.adv.images = Tensor::from_data(shape, std::move(vals));
            out.matched_clean = source.subset(out.adv.original_indices);
        } else {
            out.matched_clean.classes = source.classes;
            out.matched_clean.provenance = source.provenance;
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::header, manifest_path + ": " + e.what());
    }
    return out;
}

}  // namespace lr::attacks
