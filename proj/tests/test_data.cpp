#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "lr/data.hpp"
#include "lr/io.hpp"

using namespace lr;

namespace {

std::string temp_path(const std::string& name) {
    std::filesystem::create_directories("tmp_data");
    return (std::filesystem::path("tmp_data") / name).string();
}

void push_u32_be(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x >> 24));
    v.push_back(static_cast<uint8_t>(x >> 16));
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

// Two 4x5 images: one all-255, one ramp starting at 0.
struct IdxFixture {
    std::string images;
    std::string labels;
};

IdxFixture write_idx_fixture(uint32_t image_magic = 0x00000803u, uint32_t label_magic = 0x00000801u,
                             uint32_t image_count = 2, uint32_t label_count = 2,
                             bool truncate_pixels = false) {
    std::vector<uint8_t> img;
    push_u32_be(img, image_magic);
    push_u32_be(img, image_count);
    push_u32_be(img, 4);
    push_u32_be(img, 5);
    for (int i = 0; i < 20; ++i) img.push_back(255);
    for (int i = 0; i < 20; ++i) img.push_back(static_cast<uint8_t>(i));
    if (truncate_pixels) img.resize(img.size() - 7);

    std::vector<uint8_t> lab;
    push_u32_be(lab, label_magic);
    push_u32_be(lab, label_count);
    lab.push_back(3);
    lab.push_back(1);

    IdxFixture fx{temp_path("images.idx"), temp_path("labels.idx")};
    io::write_file(fx.images, img.data(), img.size());
    io::write_file(fx.labels, lab.data(), lab.size());
    return fx;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic and class balanced") {
    auto a = data::generate_synthetic(7, 101, 4, 28);
    auto b = data::generate_synthetic(7, 101, 4, 28);
    CHECK(a.labels == b.labels);
    const auto da = a.images.data();
    const auto db = b.images.data();
    for (int64_t i = 0; i < a.images.size(); ++i) CHECK(da[i] == db[i]);

    std::map<int, int> counts;
    for (int y : a.labels) counts[y]++;
    for (const auto& [cls, count] : counts) {
        (void)cls;
        CHECK(count >= 101 / 4);
        CHECK(count <= 101 / 4 + 1);
    }

    for (int64_t i = 0; i < a.images.size(); ++i) {
        CHECK(da[i] >= 0.0f);
        CHECK(da[i] <= 1.0f);
    }
}

TEST_CASE("synthetic n == classes yields one sample per class") {
    auto ds = data::generate_synthetic(3, 4, 4, 28);
    std::vector<int> seen(4, 0);
    for (int y : ds.labels) seen[static_cast<size_t>(y)]++;
    for (int c : seen) CHECK(c == 1);
}

TEST_CASE("synthetic argument errors") {
    CHECK_THROWS_AS(data::generate_synthetic(1, 2, 4, 28), ConfigError);   // n < classes
    CHECK_THROWS_AS(data::generate_synthetic(1, 10, 5, 28), ConfigError);  // unsupported classes
    CHECK_THROWS_AS(data::generate_synthetic(1, 10, 4, 8), ConfigError);   // size too small
}

TEST_CASE("idx fixture loads with exact scaling") {
    const auto fx = write_idx_fixture();
    auto ds = data::load_idx(fx.images, fx.labels);
    CHECK(ds.images.shape() == Shape{2, 1, 4, 5});
    CHECK(ds.labels == std::vector<int>{3, 1});
    CHECK(ds.classes == 4);
    CHECK(ds.images.data()[0] == 1.0f);   // pixel 255
    CHECK(ds.images.data()[20] == 0.0f);  // pixel 0
    CHECK(ds.images.data()[21] == doctest::Approx(1.0 / 255.0));
    CHECK(ds.provenance.rfind("idx:", 0) == 0);
}

TEST_CASE("idx loader distinguishes parse failures") {
    {
        const auto fx = write_idx_fixture(0x00000802u);
        try {
            data::load_idx(fx.images, fx.labels);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.kind == IoError::Kind::magic);
        }
    }
    {
        const auto fx = write_idx_fixture(0x00000803u, 0x00000801u, 2, 3);
        try {
            data::load_idx(fx.images, fx.labels);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.kind == IoError::Kind::consistency);
        }
    }
    {
        const auto fx = write_idx_fixture(0x00000803u, 0x00000801u, 2, 2, true);
        try {
            data::load_idx(fx.images, fx.labels);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.kind == IoError::Kind::truncated);
        }
    }
}

TEST_CASE("split partitions exactly with seeded shuffle") {
    auto ds = data::generate_synthetic(5, 8, 4, 28);
    data::SplitPlan plan{0.25, 0.25, 0.25, 0.25, 11};
    auto s1 = data::split(ds, plan);
    CHECK(s1.target_train.size() == 2);
    CHECK(s1.detector_train.size() == 2);
    CHECK(s1.calibration.size() == 2);
    CHECK(s1.test.size() == 2);

    auto s2 = data::split(ds, plan);
    CHECK(s2.target_train.labels == s1.target_train.labels);
    const auto d1 = s1.target_train.images.data();
    const auto d2 = s2.target_train.images.data();
    for (int64_t i = 0; i < s1.target_train.images.size(); ++i) CHECK(d1[i] == d2[i]);
}

TEST_CASE("union of splits equals the original multiset") {
    auto ds = data::generate_synthetic(9, 37, 4, 28);
    data::SplitPlan plan{0.4, 0.3, 0.2, 0.1, 3};
    auto s = data::split(ds, plan);
    CHECK(s.target_train.size() + s.detector_train.size() + s.calibration.size() + s.test.size() ==
          ds.size());

    // multiset of per-sample digests
    auto digest_all = [](const data::Dataset& d, std::vector<uint64_t>& out) {
        const auto img = d.images.data();
        const int64_t stride = d.images.size() / d.size();
        for (int i = 0; i < d.size(); ++i) {
            uint64_t h = io::fnv1a64(img.data() + static_cast<size_t>(i) * stride,
                                     static_cast<size_t>(stride) * sizeof(Real));
            out.push_back(h ^ static_cast<uint64_t>(d.labels[static_cast<size_t>(i)]));
        }
    };
    std::vector<uint64_t> original, rejoined;
    digest_all(ds, original);
    for (const auto* part : {&s.target_train, &s.detector_train, &s.calibration, &s.test}) {
        digest_all(*part, rejoined);
    }
    std::sort(original.begin(), original.end());
    std::sort(rejoined.begin(), rejoined.end());
    CHECK(original == rejoined);
}

TEST_CASE("split rejects bad plans") {
    auto ds = data::generate_synthetic(2, 8, 4, 28);
    CHECK_THROWS_AS(data::split(ds, {0.5, 0.5, 0.25, 0.25, 0}), DataError);   // sum != 1
    CHECK_THROWS_AS(data::split(ds, {-0.25, 0.5, 0.5, 0.25, 0}), DataError);  // negative
    auto small = data::generate_synthetic(2, 4, 4, 28);
    // 4 samples cannot fill a 0.1 slice
    CHECK_THROWS_AS(data::split(small, {0.1, 0.3, 0.3, 0.3, 0}), DataError);
}
