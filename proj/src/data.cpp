#include "lr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "lr/io.hpp"
#include "lr/rng.hpp"

namespace lr::data {

Tensor gather_images(const Tensor& images, std::span<const int> indices) {
    if (images.ndim() != 4) {
        throw ShapeError("gather_images expects [N,C,H,W], got " + shape_str(images.shape()));
    }
    const int n = images.dim(0);
    const int64_t stride = images.size() / n;
    Tensor out = Tensor::zeros({static_cast<int>(indices.size()), images.dim(1), images.dim(2),
                                images.dim(3)});
    auto src = images.data();
    auto dst = out.mutable_data();
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= n) throw IndexError("sample index " + std::to_string(idx) + " out of range");
        std::memcpy(dst.data() + i * static_cast<size_t>(stride),
                    src.data() + static_cast<size_t>(idx) * stride,
                    static_cast<size_t>(stride) * sizeof(Real));
    }
    return out;
}

Dataset Dataset::subset(std::span<const int> indices) const {
    Dataset out;
    out.images = gather_images(images, indices);
    out.labels.reserve(indices.size());
    for (int idx : indices) out.labels.push_back(labels.at(static_cast<size_t>(idx)));
    out.classes = classes;
    out.provenance = provenance;
    return out;
}

namespace {

// Hard-edged coverage test per shape family; dx/dy are offsets from the
// shape center, r the scale in pixels.
bool covered(int family, float dx, float dy, float r) {
    switch (family) {
        case 0:  // disk
            return dx * dx + dy * dy <= r * r;
        case 1:  // square
            return std::max(std::fabs(dx), std::fabs(dy)) <= 0.82f * r;
        case 2:  // cross
            return (std::fabs(dx) <= 0.33f * r && std::fabs(dy) <= r) ||
                   (std::fabs(dy) <= 0.33f * r && std::fabs(dx) <= r);
        default:  // triangle, apex up
            return dy >= -r && dy <= r && std::fabs(dx) <= (dy + r) * 0.5f;
    }
}

}  // namespace

Dataset generate_synthetic(uint64_t seed, int n, int classes, int size) {
    if (classes < 2 || classes > 4) {
        throw ConfigError("generate_synthetic supports 2..4 classes, got " + std::to_string(classes));
    }
    if (n < classes) {
        throw ConfigError("generate_synthetic needs n >= classes, got n=" + std::to_string(n));
    }
    if (size < 16) throw ConfigError("generate_synthetic needs size >= 16");

    Dataset ds;
    ds.images = Tensor::zeros({n, 1, size, size});
    ds.labels.resize(static_cast<size_t>(n));
    ds.classes = classes;
    ds.provenance = "synthetic:seed=" + std::to_string(seed) + ",n=" + std::to_string(n) +
                    ",classes=" + std::to_string(classes) + ",size=" + std::to_string(size);

    auto img = ds.images.mutable_data();
    const auto fsize = static_cast<float>(size);
    for (int i = 0; i < n; ++i) {
        const int label = i % classes;
        ds.labels[static_cast<size_t>(i)] = label;
        Rng rng(Rng::substream(seed, static_cast<uint64_t>(i)));
        const float cx = rng.uniform(0.35f, 0.65f) * fsize;
        const float cy = rng.uniform(0.35f, 0.65f) * fsize;
        const float r = rng.uniform(0.18f, 0.30f) * fsize;
        const float contrast = rng.uniform(0.25f, 0.45f);
        Real* px = img.data() + static_cast<size_t>(i) * size * size;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const float dx = static_cast<float>(x) + 0.5f - cx;
                const float dy = static_cast<float>(y) + 0.5f - cy;
                float v = covered(label, dx, dy, r) ? contrast : 0.0f;
                v += rng.uniform(-0.1f, 0.1f);
                px[y * size + x] = std::clamp(v, 0.0f, 1.0f);
            }
        }
    }
    return ds;
}

namespace {

uint32_t read_u32_be(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

}  // namespace

Dataset load_idx(const std::string& image_path, const std::string& label_path) {
    const auto img_bytes = io::read_file(image_path);
    const auto lab_bytes = io::read_file(label_path);

    if (img_bytes.size() < 16) throw IoError(IoError::Kind::truncated, image_path + ": header truncated");
    if (lab_bytes.size() < 8) throw IoError(IoError::Kind::truncated, label_path + ": header truncated");
    if (read_u32_be(img_bytes.data()) != 0x00000803u) {
        throw IoError(IoError::Kind::magic, image_path + ": bad IDX image magic");
    }
    if (read_u32_be(lab_bytes.data()) != 0x00000801u) {
        throw IoError(IoError::Kind::magic, label_path + ": bad IDX label magic");
    }
    const uint32_t n_img = read_u32_be(img_bytes.data() + 4);
    const uint32_t h = read_u32_be(img_bytes.data() + 8);
    const uint32_t w = read_u32_be(img_bytes.data() + 12);
    const uint32_t n_lab = read_u32_be(lab_bytes.data() + 4);
    if (n_img != n_lab) {
        throw IoError(IoError::Kind::consistency,
                      "image count " + std::to_string(n_img) + " != label count " + std::to_string(n_lab));
    }
    if (n_img == 0) throw DataError("IDX files contain no samples");
    const size_t want_img = 16 + static_cast<size_t>(n_img) * h * w;
    const size_t want_lab = 8 + static_cast<size_t>(n_lab);
    if (img_bytes.size() < want_img) {
        throw IoError(IoError::Kind::truncated, image_path + ": pixel data truncated");
    }
    if (lab_bytes.size() < want_lab) {
        throw IoError(IoError::Kind::truncated, label_path + ": label data truncated");
    }

    Dataset ds;
    ds.images = Tensor::zeros({static_cast<int>(n_img), 1, static_cast<int>(h), static_cast<int>(w)});
    auto dst = ds.images.mutable_data();
    for (size_t i = 0; i < static_cast<size_t>(n_img) * h * w; ++i) {
        dst[i] = static_cast<Real>(img_bytes[16 + i]) / Real{255};
    }
    ds.labels.resize(n_lab);
    int max_label = 0;
    for (size_t i = 0; i < n_lab; ++i) {
        ds.labels[i] = static_cast<int>(lab_bytes[8 + i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = max_label + 1;
    ds.provenance = "idx:images=" + io::hex64(io::fnv1a64(img_bytes.data(), img_bytes.size())) +
                    ",labels=" + io::hex64(io::fnv1a64(lab_bytes.data(), lab_bytes.size()));
    return ds;
}

Splits split(const Dataset& ds, const SplitPlan& plan) {
    const double fracs[4] = {plan.target_train, plan.detector_train, plan.calibration, plan.test};
    double sum = 0.0;
    for (double f : fracs) {
        if (f <= 0.0) throw DataError("split fractions must be positive");
        sum += f;
    }
    if (std::fabs(sum - 1.0) > 1e-9) {
        throw DataError("split fractions sum to " + std::to_string(sum) + ", expected 1");
    }
    const int n = ds.size();
    if (n <= 0) throw DataError("cannot split an empty dataset");

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(plan.seed);
    rng.shuffle(order);

    // Cumulative-floor boundaries: the partition is exact by construction.
    int bounds[5] = {0, 0, 0, 0, n};
    double cum = 0.0;
    for (int k = 0; k < 3; ++k) {
        cum += fracs[k];
        bounds[k + 1] = static_cast<int>(std::floor(cum * n));
    }
    for (int k = 0; k < 4; ++k) {
        if (bounds[k + 1] - bounds[k] <= 0) {
            throw DataError("split " + std::to_string(k) + " is empty for n=" + std::to_string(n));
        }
    }

    auto make = [&](int lo, int hi) {
        return ds.subset(std::span<const int>(order.data() + lo, static_cast<size_t>(hi - lo)));
    };
    Splits out;
    out.target_train = make(bounds[0], bounds[1]);
    out.detector_train = make(bounds[1], bounds[2]);
    out.calibration = make(bounds[2], bounds[3]);
    out.test = make(bounds[3], bounds[4]);
    return out;
}

}  // namespace lr::data
