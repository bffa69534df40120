#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lr/attacks.hpp"
#include "lr/ops.hpp"
#include "lr/rng.hpp"
#include "tiny.hpp"

using namespace lr;
using attacks::AttackConfig;

namespace {

double linf(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    auto ad = a.data();
    auto bd = b.data();
    for (size_t i = 0; i < ad.size(); ++i) {
        m = std::max(m, std::fabs(static_cast<double>(ad[i]) - static_cast<double>(bd[i])));
    }
    return m;
}

void check_ball_and_box(const Tensor& adv, const Tensor& orig, double eps) {
    CHECK(linf(adv, orig) <= eps + 1e-6);
    for (Real v : adv.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

std::vector<double> per_sample_ce(const nn::ModelGraph& m, const Tensor& x,
                                  const std::vector<int>& y) {
    Tensor probs = softmax(nn::forward(m, x));
    const int c = probs.dim(1);
    std::vector<double> out;
    for (size_t i = 0; i < y.size(); ++i) {
        out.push_back(-std::log(
            static_cast<double>(probs.data()[i * static_cast<size_t>(c) +
                                             static_cast<size_t>(y[i])])));
    }
    return out;
}

}  // namespace

TEST_CASE("config invariants are enforced") {
    AttackConfig bad;
    bad.epsilon = 1.5f;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.epsilon = -0.1f;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    AttackConfig fgsm;
    fgsm.kind = AttackConfig::Kind::fgsm;
    fgsm.iters = 5;
    fgsm.random_start = false;
    CHECK_THROWS_AS(fgsm.validate(), ConfigError);

    AttackConfig zero_iters;
    zero_iters.iters = 0;
    CHECK_THROWS_AS(zero_iters.validate(), ConfigError);

    CHECK(AttackConfig{}.effective_alpha() == doctest::Approx(0.03 / 4));
}

TEST_CASE("fgsm with zero epsilon is the identity") {
    const auto& fx = tiny::trained();
    std::vector<int> pick{0, 1, 2, 3};
    Tensor x = data::gather_images(fx.test.images, pick);
    std::vector<int> y(fx.test.labels.begin(), fx.test.labels.begin() + 4);
    Tensor adv = attacks::attack_fgsm(fx.model, x, y, 0.0f);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(adv.data()[i] == x.data()[i]);
}

TEST_CASE("fgsm rejects epsilon outside [0,1]") {
    const auto& fx = tiny::trained();
    std::vector<int> pick{0};
    Tensor x = data::gather_images(fx.test.images, pick);
    std::vector<int> y{fx.test.labels[0]};
    CHECK_THROWS_AS(attacks::attack_fgsm(fx.model, x, y, 1.5f), ConfigError);
    CHECK_THROWS_AS(attacks::attack_fgsm(fx.model, x, y, -0.01f), ConfigError);
}

TEST_CASE("a saturated pixel with positive gradient stays at 1.0") {
    // Two-class linear model with all-negative head weights for class 0, so
    // the loss gradient w.r.t. every pixel is strictly positive.
    auto m = nn::build_model({nn::flatten_layer("flat"), nn::dense("head", 2)}, {1, 2, 2}, 2, 1);
    auto wd = m.params()[0].mutable_data();  // [4,2]
    for (int i = 0; i < 4; ++i) {
        wd[static_cast<size_t>(i) * 2] = -1.0f;
        wd[static_cast<size_t>(i) * 2 + 1] = 0.0f;
    }
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1.0f, 0.5f, 0.25f, 1.0f});
    Tensor adv = attacks::attack_fgsm(m, x, {0}, 0.1f);
    CHECK(adv.data()[0] == 1.0f);  // clipped, was already saturated
    CHECK(adv.data()[3] == 1.0f);
    CHECK(adv.data()[1] == doctest::Approx(0.6f));
    CHECK(adv.data()[2] == doctest::Approx(0.35f));
}

TEST_CASE("single-step iterative attack reduces to fgsm bit-exactly") {
    const auto& fx = tiny::trained();
    std::vector<int> pick{0, 1, 2, 3, 4, 5};
    Tensor x = data::gather_images(fx.test.images, pick);
    std::vector<int> y(fx.test.labels.begin(), fx.test.labels.begin() + 6);

    AttackConfig cfg;
    cfg.kind = AttackConfig::Kind::bim;
    cfg.epsilon = 0.05f;
    cfg.alpha = 0.05f;
    cfg.iters = 1;
    cfg.random_start = false;
    Tensor a = attacks::attack_iterative(fx.model, x, y, cfg);
    Tensor b = attacks::attack_fgsm(fx.model, x, y, 0.05f);
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("iterates satisfy the ball and box constraints for random configs") {
    const auto& fx = tiny::trained();
    Rng rng(99);
    std::vector<int> pick{0, 1, 2, 3, 4, 5, 6, 7};
    Tensor x = data::gather_images(fx.test.images, pick);
    std::vector<int> y(fx.test.labels.begin(), fx.test.labels.begin() + 8);
    for (int trial = 0; trial < 6; ++trial) {
        AttackConfig cfg;
        cfg.kind = trial % 2 ? AttackConfig::Kind::pgd : AttackConfig::Kind::bim;
        cfg.epsilon = rng.uniform(0.01f, 0.3f);
        cfg.alpha = rng.uniform(0.002f, 0.2f);
        cfg.iters = 1 + static_cast<int>(rng.below(8));
        cfg.random_start = cfg.kind == AttackConfig::Kind::pgd;
        cfg.seed = rng.next_u64();
        Tensor adv = attacks::attack_iterative(fx.model, x, y, cfg);
        check_ball_and_box(adv, x, cfg.epsilon);
    }
}

TEST_CASE("attacks are deterministic given seed and inputs") {
    const auto& fx = tiny::trained();
    std::vector<int> pick{3, 4, 5, 6};
    Tensor x = data::gather_images(fx.test.images, pick);
    std::vector<int> y;
    for (int i : pick) y.push_back(fx.test.labels[static_cast<size_t>(i)]);
    AttackConfig cfg;
    cfg.epsilon = 0.08f;
    cfg.iters = 5;
    cfg.seed = 1234;
    Tensor a = attacks::attack_iterative(fx.model, x, y, cfg, pick);
    Tensor b = attacks::attack_iterative(fx.model, x, y, cfg, pick);
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);

    cfg.seed = 1235;
    Tensor c = attacks::attack_iterative(fx.model, x, y, cfg, pick);
    CHECK(linf(a, c) > 0.0);
}

TEST_CASE("fgsm increases the per-sample loss almost always") {
    const auto& fx = tiny::trained();
    const int n = 60;
    std::vector<int> pick;
    for (int i = 0; i < n; ++i) pick.push_back(i);
    Tensor x = data::gather_images(fx.test.images, pick);
    std::vector<int> y(fx.test.labels.begin(), fx.test.labels.begin() + n);

    Tensor adv = attacks::attack_fgsm(fx.model, x, y, 0.05f);
    const auto before = per_sample_ce(fx.model, x, y);
    const auto after = per_sample_ce(fx.model, adv, y);
    int increased = 0;
    for (int i = 0; i < n; ++i) {
        if (after[static_cast<size_t>(i)] >= before[static_cast<size_t>(i)]) ++increased;
    }
    CHECK(static_cast<double>(increased) / n >= 0.95);
}

TEST_CASE("post-attack accuracy is non-increasing in epsilon") {
    const auto& fx = tiny::trained();
    const double base = nn::evaluate_accuracy(fx.model, fx.test);
    CHECK(base > 0.8);  // fixture sanity
    double prev = base;
    for (Real eps : {0.01f, 0.03f, 0.09f, 0.3f}) {
        AttackConfig cfg;
        cfg.epsilon = eps;
        cfg.iters = 10;
        cfg.seed = 5;
        Tensor adv = attacks::attack_iterative(fx.model, fx.test.images, fx.test.labels, cfg);
        data::Dataset attacked = fx.test;
        attacked.images = adv;
        const double acc = nn::evaluate_accuracy(fx.model, attacked);
        CHECK(acc <= prev + 1e-9);
        prev = acc;
    }
}

TEST_CASE("adversarial set keeps only flipped samples with matched clean") {
    const auto& fx = tiny::trained();
    AttackConfig cfg;
    cfg.epsilon = 0.15f;
    cfg.iters = 10;
    cfg.seed = 3;
    const auto outcome = attacks::build_adversarial_set(fx.model, fx.test, cfg);

    const auto pred = nn::predict(fx.model, fx.test.images);
    int eligible = 0;
    for (int i = 0; i < fx.test.size(); ++i) {
        if (pred[static_cast<size_t>(i)] == fx.test.labels[static_cast<size_t>(i)]) ++eligible;
    }
    CHECK(static_cast<int>(outcome.adv.eligible_indices.size()) == eligible);
    REQUIRE(!outcome.adv.empty());

    // every kept adversarial is misclassified
    const auto adv_pred = nn::predict(fx.model, outcome.adv.images);
    for (size_t i = 0; i < adv_pred.size(); ++i) {
        CHECK(adv_pred[i] != outcome.adv.labels[i]);
    }
    // every matched clean counterpart is correctly classified
    const auto clean_pred = nn::predict(fx.model, outcome.matched_clean.images);
    for (size_t i = 0; i < clean_pred.size(); ++i) {
        CHECK(clean_pred[i] == outcome.matched_clean.labels[i]);
    }
    // per-sample ball invariant against the matched clean images
    check_ball_and_box(outcome.adv.images, outcome.matched_clean.images, cfg.epsilon);

    int successes = 0;
    for (uint8_t s : outcome.adv.success) successes += s;
    CHECK(successes == outcome.adv.size());
}

TEST_CASE("zero epsilon yields an empty set as a signal") {
    const auto& fx = tiny::trained();
    AttackConfig cfg;
    cfg.epsilon = 0.0f;
    const auto outcome = attacks::build_adversarial_set(fx.model, fx.test, cfg);
    CHECK(outcome.adv.empty());
    CHECK(!outcome.adv.eligible_indices.empty());
    CHECK_THROWS_AS(attacks::to_dataset(outcome.adv, fx.test), DataError);
}

TEST_CASE("adversarial datasets are flagged by provenance") {
    const auto& fx = tiny::trained();
    AttackConfig cfg;
    cfg.epsilon = 0.15f;
    cfg.iters = 10;
    const auto outcome = attacks::build_adversarial_set(fx.model, fx.test, cfg);
    REQUIRE(!outcome.adv.empty());
    const auto ds = attacks::to_dataset(outcome.adv, fx.test);
    CHECK(ds.provenance.rfind("adversarial:", 0) == 0);
    CHECK(outcome.matched_clean.provenance.rfind("adversarial", 0) != 0);
}

TEST_CASE("adversarial set round-trips through the manifest and blob") {
    const auto& fx = tiny::trained();
    AttackConfig cfg;
    cfg.epsilon = 0.12f;
    cfg.iters = 6;
    cfg.seed = 17;
    const auto outcome = attacks::build_adversarial_set(fx.model, fx.test, cfg);
    REQUIRE(!outcome.adv.empty());

    std::filesystem::create_directories("tmp_attacks");
    attacks::save_adversarial_set(outcome, "tmp_attacks");
    const auto loaded = attacks::load_adversarial_set("tmp_attacks", fx.test);
    CHECK(loaded.adv.original_indices == outcome.adv.original_indices);
    CHECK(loaded.adv.labels == outcome.adv.labels);
    CHECK(loaded.adv.success == outcome.adv.success);
    CHECK(loaded.adv.config.epsilon == cfg.epsilon);
    for (int64_t i = 0; i < outcome.adv.images.size(); ++i) {
        CHECK(loaded.adv.images.data()[i] == outcome.adv.images.data()[i]);
    }
    for (int64_t i = 0; i < outcome.matched_clean.images.size(); ++i) {
        CHECK(loaded.matched_clean.images.data()[i] == outcome.matched_clean.images.data()[i]);
    }
}
