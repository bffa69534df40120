#include "lr/nn.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "lr/io.hpp"
#include "lr/ops.hpp"
#include "lr/optim.hpp"
#include "lr/rng.hpp"

namespace lr::nn {

LayerSpec conv3x3(std::string name, int channels, int stride, int pad) {
    return LayerSpec{LayerSpec::Kind::conv3x3, std::move(name), channels, stride, pad};
}

LayerSpec dense(std::string name, int units) {
    return LayerSpec{LayerSpec::Kind::dense, std::move(name), units, 1, 1};
}

LayerSpec relu_layer(std::string name) {
    return LayerSpec{LayerSpec::Kind::relu, std::move(name), 0, 1, 1};
}

LayerSpec flatten_layer(std::string name) {
    return LayerSpec{LayerSpec::Kind::flatten, std::move(name), 0, 1, 1};
}

const char* kind_name(LayerSpec::Kind k) {
    switch (k) {
        case LayerSpec::Kind::conv3x3: return "conv3x3";
        case LayerSpec::Kind::dense: return "dense";
        case LayerSpec::Kind::relu: return "relu";
        case LayerSpec::Kind::flatten: return "flatten";
    }
    return "?";
}

LayerSpec::Kind kind_from_name(const std::string& s) {
    if (s == "conv3x3") return LayerSpec::Kind::conv3x3;
    if (s == "dense") return LayerSpec::Kind::dense;
    if (s == "relu") return LayerSpec::Kind::relu;
    if (s == "flatten") return LayerSpec::Kind::flatten;
    throw ConfigError("unknown layer kind '" + s + "'");
}

const Tensor& Activations::by_name(const std::string& name) const {
    const int i = index_of(name);
    if (i < 0) throw IndexError("no activation named '" + name + "'");
    return values[static_cast<size_t>(i)];
}

int Activations::index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

int ModelGraph::layer_index(const std::string& name) const {
    for (size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

uint64_t ModelGraph::params_digest() const {
    uint64_t h = 0xCBF29CE484222325ull;
    for (const Tensor& p : params_) {
        const auto d = p.data();
        const uint64_t part = io::fnv1a64(d.data(), d.size() * sizeof(Real));
        h = Rng::mix64(h ^ part);
    }
    return h;
}

ModelGraph build_model(std::vector<LayerSpec> spec, Shape input_shape, int classes, uint64_t seed) {
    if (spec.empty()) throw ConfigError("build_model: empty layer spec");
    if (classes < 2) throw ConfigError("build_model: classes must be >= 2");
    if (input_shape.size() != 3) {
        throw ConfigError("build_model: input shape must be {C,H,W}, got " + shape_str(input_shape));
    }

    std::unordered_set<std::string> names;
    for (const auto& l : spec) {
        if (l.name.empty()) throw ConfigError("build_model: layer with empty name");
        if (!names.insert(l.name).second) {
            throw ConfigError("build_model: duplicate layer name '" + l.name + "'");
        }
    }

    ModelGraph m;
    m.layers_ = std::move(spec);
    m.input_shape_ = input_shape;
    m.classes_ = classes;
    m.meta.init_seed = seed;

    // Shape propagation (per-sample shapes, no batch dimension).
    Rng rng(seed);
    Shape cur = input_shape;
    for (const auto& l : m.layers_) {
        switch (l.kind) {
            case LayerSpec::Kind::conv3x3: {
                if (cur.size() != 3) {
                    throw ConfigError("build_model: layer '" + l.name + "' needs {C,H,W} input, got " +
                                      shape_str(cur));
                }
                if (l.units <= 0) throw ConfigError("build_model: layer '" + l.name + "' has no channels");
                if (l.stride != 1 && l.stride != 2) {
                    throw ConfigError("build_model: layer '" + l.name + "' stride must be 1 or 2");
                }
                if (l.pad != 0 && l.pad != 1) {
                    throw ConfigError("build_model: layer '" + l.name + "' pad must be 0 or 1");
                }
                const int h = (cur[1] + 2 * l.pad - 3) / l.stride + 1;
                const int w = (cur[2] + 2 * l.pad - 3) / l.stride + 1;
                if (cur[1] + 2 * l.pad < 3 || cur[2] + 2 * l.pad < 3 || h <= 0 || w <= 0) {
                    throw ConfigError("build_model: layer '" + l.name + "' output would be empty");
                }
                const int fan_in = cur[0] * 9;
                const Real bound = static_cast<Real>(std::sqrt(6.0 / fan_in));
                Tensor wgt = Tensor::zeros({l.units, cur[0], 3, 3});
                for (Real& v : wgt.mutable_data()) v = rng.uniform(-bound, bound);
                Tensor bias = Tensor::zeros({l.units});
                m.param_at_.push_back(static_cast<int>(m.params_.size()));
                m.params_.push_back(wgt);
                m.params_.push_back(bias);
                cur = {l.units, h, w};
                break;
            }
            case LayerSpec::Kind::dense: {
                if (cur.size() != 1) {
                    throw ConfigError("build_model: layer '" + l.name +
                                      "' needs a flat input, got " + shape_str(cur) +
                                      " (missing flatten?)");
                }
                if (l.units <= 0) throw ConfigError("build_model: layer '" + l.name + "' has no units");
                const int fan_in = cur[0];
                const Real bound = static_cast<Real>(std::sqrt(6.0 / fan_in));
                Tensor wgt = Tensor::zeros({fan_in, l.units});
                for (Real& v : wgt.mutable_data()) v = rng.uniform(-bound, bound);
                Tensor bias = Tensor::zeros({l.units});
                m.param_at_.push_back(static_cast<int>(m.params_.size()));
                m.params_.push_back(wgt);
                m.params_.push_back(bias);
                cur = {l.units};
                break;
            }
            case LayerSpec::Kind::relu:
                m.param_at_.push_back(-1);
                break;
            case LayerSpec::Kind::flatten: {
                m.param_at_.push_back(-1);
                cur = {static_cast<int>(numel(cur))};
                break;
            }
        }
        m.out_shapes_.push_back(cur);
    }

    const auto& last = m.layers_.back();
    if (last.kind != LayerSpec::Kind::dense || last.units != classes) {
        throw ConfigError("build_model: final layer '" + last.name +
                          "' must be a dense head with units == classes");
    }

    // Feature layer: post-activation output of the last hidden dense layer.
    int hidden_dense = -1;
    for (int i = 0; i + 1 < static_cast<int>(m.layers_.size()); ++i) {
        if (m.layers_[static_cast<size_t>(i)].kind == LayerSpec::Kind::dense) hidden_dense = i;
    }
    if (hidden_dense >= 0) {
        const int next = hidden_dense + 1;
        if (next + 1 < static_cast<int>(m.layers_.size()) &&
            m.layers_[static_cast<size_t>(next)].kind == LayerSpec::Kind::relu) {
            m.feature_index_ = next;
        } else {
            m.feature_index_ = hidden_dense;
        }
    } else {
        // No hidden dense layer: fall back to the layer right before the head
        // if it is flat.
        const int prev = static_cast<int>(m.layers_.size()) - 2;
        if (prev < 0 || m.out_shapes_[static_cast<size_t>(prev)].size() != 1) {
            throw ConfigError("build_model: no flat feature layer before the head");
        }
        m.feature_index_ = prev;
    }
    return m;
}

std::vector<LayerSpec> desk_spec() {
    return {conv3x3("conv1", 8, 1, 1),  relu_layer("relu1"), conv3x3("conv2", 16, 2, 1),
            relu_layer("relu2"),        conv3x3("conv3", 32, 2, 1), relu_layer("relu3"),
            flatten_layer("flatten"),   dense("fc1", 64),    relu_layer("relu4"),
            dense("head", 4)};
}

ModelGraph desk_model(uint64_t seed) { return build_model(desk_spec(), {1, 28, 28}, 4, seed); }

std::pair<Tensor, Activations> forward_with_taps(const ModelGraph& m, const Tensor& x, Tape* tape) {
    if (x.ndim() != 4 || x.dim(1) != m.input_shape_[0] || x.dim(2) != m.input_shape_[1] ||
        x.dim(3) != m.input_shape_[2]) {
        throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match model input " +
                         shape_str(m.input_shape_));
    }
    const int batch = x.dim(0);
    Activations acts;
    acts.names.reserve(m.layers_.size());
    acts.values.reserve(m.layers_.size());

    Tensor cur = x;
    for (size_t i = 0; i < m.layers_.size(); ++i) {
        const auto& l = m.layers_[i];
        switch (l.kind) {
            case LayerSpec::Kind::conv3x3: {
                const int p = m.param_at_[i];
                cur = conv2d(cur, m.params_[static_cast<size_t>(p)], l.stride, l.pad, tape);
                cur = add_channel_bias(cur, m.params_[static_cast<size_t>(p) + 1], tape);
                break;
            }
            case LayerSpec::Kind::dense: {
                const int p = m.param_at_[i];
                cur = matmul(cur, m.params_[static_cast<size_t>(p)], tape);
                cur = add_row_bias(cur, m.params_[static_cast<size_t>(p) + 1], tape);
                break;
            }
            case LayerSpec::Kind::relu:
                cur = relu(cur, tape);
                break;
            case LayerSpec::Kind::flatten:
                cur = reshape(cur, {batch, static_cast<int>(numel(m.out_shapes_[i]))}, tape);
                break;
        }
        acts.names.push_back(l.name);
        acts.values.push_back(cur);
    }
    return {cur, std::move(acts)};
}

Tensor forward(const ModelGraph& m, const Tensor& x, Tape* tape) {
    return forward_with_taps(m, x, tape).first;
}

namespace {

// Leaf flags for training; restores the previous state on scope exit.
class GradGuard {
  public:
    explicit GradGuard(std::vector<Tensor>& params) : params_(params) {
        for (Tensor& p : params_) {
            prev_.push_back(p.requires_grad());
            p.set_requires_grad(true);
        }
    }
    ~GradGuard() {
        for (size_t i = 0; i < params_.size(); ++i) {
            params_[i].set_requires_grad(prev_[i]);
            params_[i].drop_grad();
        }
    }

  private:
    std::vector<Tensor>& params_;
    std::vector<bool> prev_;
};

}  // namespace

TrainHistory train_classifier(ModelGraph& m, const data::Dataset& train, int epochs, int batch,
                              Real lr, uint64_t seed) {
    if (train.size() == 0) throw DataError("train_classifier: empty dataset");
    if (epochs < 1) throw ConfigError("train_classifier: epochs must be >= 1");
    if (batch < 1) throw ConfigError("train_classifier: batch must be >= 1");

    const int n = train.size();
    GradGuard guard(m.params());
    AdamState state(m.params());
    const AdamConfig cfg{lr};

    Rng rng(seed);
    TrainHistory history;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        double loss_acc = 0.0;
        int64_t correct = 0;
        for (int lo = 0; lo < n; lo += batch) {
            const int hi = std::min(lo + batch, n);
            const std::span<const int> idx(order.data() + lo, static_cast<size_t>(hi - lo));
            Tensor xb = data::gather_images(train.images, idx);
            std::vector<int> yb;
            yb.reserve(idx.size());
            for (int j : idx) yb.push_back(train.labels[static_cast<size_t>(j)]);

            Tape tape;
            Tensor logits = forward(m, xb, &tape);
            Tensor loss = softmax_cross_entropy(logits, yb, &tape);
            tape.backward(loss);
            adam_step(m.params(), state, cfg);

            loss_acc += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
            const auto pred = argmax_rows(logits);
            for (size_t j = 0; j < yb.size(); ++j) {
                if (pred[j] == yb[j]) ++correct;
            }
        }
        history.push_back({loss_acc / n, static_cast<double>(correct) / n});
    }

    m.meta.train_seed = seed;
    m.meta.epochs += epochs;
    m.meta.final_accuracy = history.back().accuracy;
    return history;
}

std::vector<int> predict(const ModelGraph& m, const Tensor& images) {
    const int n = images.dim(0);
    constexpr int kBatch = 256;
    std::vector<int> out;
    out.reserve(static_cast<size_t>(n));
    std::vector<int> idx;
    for (int lo = 0; lo < n; lo += kBatch) {
        const int hi = std::min(lo + kBatch, n);
        idx.resize(static_cast<size_t>(hi - lo));
        std::iota(idx.begin(), idx.end(), lo);
        Tensor xb = data::gather_images(images, idx);
        const auto pred = argmax_rows(forward(m, xb));
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

double evaluate_accuracy(const ModelGraph& m, const data::Dataset& ds) {
    if (ds.size() == 0) throw DataError("evaluate_accuracy: empty dataset");
    const auto pred = predict(m, ds.images);
    int64_t correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == ds.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

void save_checkpoint(const ModelGraph& m, const std::string& path) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : m.layers()) {
        layers.push_back({{"kind", kind_name(l.kind)},
                          {"name", l.name},
                          {"units", l.units},
                          {"stride", l.stride},
                          {"pad", l.pad}});
    }
    int64_t total = 0;
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& p : m.params()) {
        shapes.push_back(p.shape());
        total += p.size();
    }
    const nlohmann::json header = {
        {"kind", "model"},
        {"blob_len", total},
        {"classes", m.classes()},
        {"input_shape", m.input_shape()},
        {"feature_index", m.feature_index()},
        {"layers", layers},
        {"param_shapes", shapes},
        {"meta",
         {{"init_seed", m.meta.init_seed},
          {"train_seed", m.meta.train_seed},
          {"epochs", m.meta.epochs},
          {"final_accuracy", m.meta.final_accuracy}}},
    };

    std::vector<float> blob;
    blob.reserve(static_cast<size_t>(total));
    for (const auto& p : m.params()) blob.insert(blob.end(), p.data().begin(), p.data().end());
    io::write_container(path, header.dump(), blob);
}

ModelGraph load_checkpoint(const std::string& path) {
    const auto c = io::read_container(path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(c.header_json);
        if (header.at("kind").get<std::string>() != "model") {
            throw IoError(IoError::Kind::header, path + ": not a model checkpoint");
        }
        std::vector<LayerSpec> spec;
        for (const auto& jl : header.at("layers")) {
            LayerSpec l;
            l.kind = kind_from_name(jl.at("kind").get<std::string>());
            l.name = jl.at("name").get<std::string>();
            l.units = jl.at("units").get<int>();
            l.stride = jl.at("stride").get<int>();
            l.pad = jl.at("pad").get<int>();
            spec.push_back(std::move(l));
        }
        const Shape input_shape = header.at("input_shape").get<Shape>();
        const int classes = header.at("classes").get<int>();
        const auto& jm = header.at("meta");

        ModelGraph m = build_model(std::move(spec), input_shape, classes, jm.at("init_seed").get<uint64_t>());
        m.meta.train_seed = jm.at("train_seed").get<uint64_t>();
        m.meta.epochs = jm.at("epochs").get<int>();
        m.meta.final_accuracy = jm.at("final_accuracy").get<double>();

        int64_t total = 0;
        for (const auto& p : m.params()) total += p.size();
        if (total != static_cast<int64_t>(c.blob.size())) {
            throw IoError(IoError::Kind::consistency,
                          path + ": graph wants " + std::to_string(total) + " parameters, blob has " +
                              std::to_string(c.blob.size()));
        }
        size_t off = 0;
        for (auto& p : m.params()) {
            auto dst = p.mutable_data();
            std::copy(c.blob.begin() + static_cast<std::ptrdiff_t>(off),
                      c.blob.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
            off += dst.size();
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::header, path + ": bad model header: " + e.what());
    }
}

}  // namespace lr::nn
