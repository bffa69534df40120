#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lr/ops.hpp"
#include "lr/optim.hpp"
#include "lr/rng.hpp"
#include "lr/tape.hpp"
#include "lr/tensor.hpp"
#include "oracles.hpp"

using namespace lr;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, Real lo = -1.0f, Real hi = 1.0f) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (Real& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("rng matches the published splitmix64 sequence") {
    Rng r0(0);
    CHECK(r0.next_u64() == 0xe220a8397b1dcdafull);
    CHECK(r0.next_u64() == 0x6e789e6aa1b965f4ull);
    CHECK(r0.next_u64() == 0x06c45d188009454full);

    Rng r7(7);
    CHECK(r7.next_u64() == 0x63cbe1e459320dd7ull);

    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng uniform and below stay in range") {
    Rng rng(123);
    for (int i = 0; i < 1000; ++i) {
        const Real u = rng.uniform();
        CHECK(u >= 0.0f);
        CHECK(u < 1.0f);
        CHECK(rng.below(17) < 17);
    }
    Rng s1(9), s2(9);
    std::vector<int> v1{1, 2, 3, 4, 5, 6}, v2{1, 2, 3, 4, 5, 6};
    s1.shuffle(v1);
    s2.shuffle(v2);
    CHECK(v1 == v2);
}

TEST_CASE("tensor invariants") {
    Tensor t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(t.size() == 4);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
    CHECK_THROWS_AS(t.item(), UsageError);
    CHECK(Tensor::scalar(5.0f).item() == 5.0f);
    CHECK(t.all_finite());
}

TEST_CASE("matmul identity and hand product") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(eye, m);
    for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == m.data()[i]);

    Tensor a = Tensor::from_data({1, 2}, {1, 2});
    Tensor b = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(a, b).item() == doctest::Approx(11.0).epsilon(1e-12));
}

TEST_CASE("matmul matches the naive loop oracle") {
    Rng rng(11);
    Tensor a = random_tensor({5, 4}, rng);
    Tensor b = random_tensor({4, 3}, rng);
    Tensor out = matmul(a, b);
    const auto want = oracle::matmul(oracle::to_d(a.data()), oracle::to_d(b.data()), 5, 4, 3);
    double max_diff = 0.0;
    for (size_t i = 0; i < want.size(); ++i) {
        max_diff = std::max(max_diff, std::fabs(want[i] - static_cast<double>(out.data()[i])));
    }
    CHECK(max_diff < 1e-6);
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("conv2d zero input and ones kernel") {
    Tensor x = Tensor::zeros({1, 2, 5, 5});
    Tensor k = Tensor::full({3, 2, 3, 3}, 0.7f);
    Tensor out = conv2d(x, k, 1, 1);
    for (Real v : out.data()) CHECK(v == 0.0f);

    Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor kone = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor o = conv2d(ones, kone, 1, 0);
    CHECK(o.shape() == Shape{1, 1, 1, 1});
    CHECK(o.item() == doctest::Approx(9.0));
}

TEST_CASE("conv2d matches the six-loop oracle across strides and pads") {
    Rng rng(21);
    for (int stride : {1, 2}) {
        for (int pad : {0, 1}) {
            Tensor x = random_tensor({2, 3, 8, 8}, rng);
            Tensor k = random_tensor({4, 3, 3, 3}, rng);
            Tensor out = conv2d(x, k, stride, pad);
            const auto want = oracle::conv2d(oracle::to_d(x.data()), oracle::to_d(k.data()), 2,
                                             3, 8, 8, 4, stride, pad);
            REQUIRE(out.size() == static_cast<int64_t>(want.size()));
            double max_diff = 0.0;
            for (size_t i = 0; i < want.size(); ++i) {
                max_diff =
                    std::max(max_diff, std::fabs(want[i] - static_cast<double>(out.data()[i])));
            }
            CHECK(max_diff < 1e-5);
        }
    }
}

TEST_CASE("conv2d rejects bad geometry") {
    Tensor x = Tensor::zeros({1, 1, 2, 2});
    Tensor k = Tensor::zeros({1, 1, 3, 3});
    CHECK_THROWS_AS(conv2d(x, k, 1, 0), ShapeError);   // empty output
    CHECK_THROWS_AS(conv2d(x, k, 3, 1), ConfigError);  // stride domain
    CHECK_THROWS_AS(conv2d(x, k, 1, 2), ConfigError);  // pad domain
    Tensor k2 = Tensor::zeros({1, 2, 3, 3});
    Tensor x2 = Tensor::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(x2, k2, 1, 1), ShapeError);  // channel mismatch
}

TEST_CASE("relu values and masked gradient") {
    Tensor x = Tensor::from_data({3}, {-1, 0, 2});
    Tensor out = relu(x);
    CHECK(out.data()[0] == 0.0f);
    CHECK(out.data()[1] == 0.0f);
    CHECK(out.data()[2] == 2.0f);

    Tensor neg = Tensor::full({4}, -3.0f);
    Tensor neg_out = relu(neg);
    for (Real v : neg_out.data()) CHECK(v == 0.0f);

    // analytic gradient: 1 on the positive side, 0 on the negative side
    Tensor leaf = Tensor::from_data({2}, {3.0f, -3.0f});
    leaf.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum(relu(leaf, &tape), &tape);
    tape.backward(loss);
    CHECK(leaf.grad()[0] == 1.0f);
    CHECK(leaf.grad()[1] == 0.0f);

    // finite differences agree away from the kink
    const auto fd = oracle::central_diff(leaf.mutable_data(), [&]() {
        double acc = 0.0;
        for (Real v : leaf.data()) acc += std::max(0.0, static_cast<double>(v));
        return acc;
    });
    CHECK(fd[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(fd[1] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("cross-entropy trivial values and stability") {
    Tensor logits = Tensor::from_data({1, 2}, {0, 0});
    CHECK(softmax_cross_entropy(logits, {0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    Tensor big = Tensor::from_data({1, 2}, {1000, 0});
    const Real stable = softmax_cross_entropy(big, {0}).item();
    CHECK(std::isfinite(stable));
    CHECK(stable == doctest::Approx(0.0).epsilon(1e-6));

    CHECK_THROWS_AS(softmax_cross_entropy(logits, {2}), IndexError);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1}), IndexError);
}

TEST_CASE("softmax rows sum to one and loss is nonnegative") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_tensor({4, 5}, rng, -6.0f, 6.0f);
        Tensor probs = softmax(logits);
        for (int i = 0; i < 4; ++i) {
            double row = 0.0;
            for (int j = 0; j < 5; ++j) row += probs.data()[static_cast<size_t>(i) * 5 + j];
            CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
        }
        std::vector<int> labels{0, 1, 2, 3};
        CHECK(softmax_cross_entropy(logits, labels).item() >= 0.0f);
    }
}

TEST_CASE("cross-entropy gradient matches central differences") {
    Rng rng(41);
    Tensor logits = random_tensor({4, 5}, rng, -2.0f, 2.0f);
    const std::vector<int> labels{1, 0, 4, 2};
    logits.set_requires_grad(true);
    Tape tape;
    Tensor loss = softmax_cross_entropy(logits, labels, &tape);
    tape.backward(loss);
    const auto fd = oracle::central_diff(logits.mutable_data(), [&]() {
        return oracle::softmax_cross_entropy(oracle::to_d(logits.data()), labels, 4, 5);
    });
    CHECK(oracle::grad_agreement(logits.grad(), fd, 1e-4) >= 0.99);
}

TEST_CASE("backward on sum and square") {
    Tensor x = Tensor::from_data({3}, {5, -2, 0.5f});
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum(x, &tape);
    tape.backward(loss);
    for (Real g : x.grad()) CHECK(g == 1.0f);

    Tensor w = Tensor::from_data({1}, {2.0f});
    w.set_requires_grad(true);
    Tape t2;
    Tensor sq = sum(mul(w, w, &t2), &t2);
    t2.backward(sq);
    CHECK(w.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects a loss from another tape and does not double-count") {
    Tensor x = Tensor::from_data({2}, {1, 2});
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum(x, &tape);
    Tape other;
    CHECK_THROWS_AS(other.backward(loss), UsageError);
    CHECK_THROWS_AS(tape.backward(x), UsageError);  // not scalar / not produced

    tape.backward(loss);
    const std::vector<Real> first(x.grad().begin(), x.grad().end());
    tape.backward(loss);  // grads are re-zeroed, not doubled
    for (size_t i = 0; i < first.size(); ++i) CHECK(x.grad()[i] == first[i]);
}

TEST_CASE("composite conv+dense network passes finite-difference checks") {
    Rng rng(51);
    Tensor x = random_tensor({2, 2, 6, 6}, rng);
    Tensor k = random_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f);
    Tensor w = random_tensor({3 * 3 * 3, 4}, rng, -0.5f, 0.5f);
    Tensor b = random_tensor({4}, rng, -0.5f, 0.5f);
    const std::vector<int> labels{1, 3};
    k.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    x.set_requires_grad(true);

    auto run = [&](Tape* tape) {
        Tensor h = relu(conv2d(x, k, 2, 1, tape), tape);
        Tensor flat = reshape(h, {2, 3 * 3 * 3}, tape);
        Tensor logits = add_row_bias(matmul(flat, w, tape), b, tape);
        return softmax_cross_entropy(logits, labels, tape);
    };

    Tape tape;
    Tensor loss = run(&tape);
    tape.backward(loss);

    // double-precision replica of the same network, built in test code
    auto eval = [&]() {
        auto h = oracle::relu(oracle::conv2d(oracle::to_d(x.data()), oracle::to_d(k.data()), 2, 2,
                                             6, 6, 3, 2, 1));
        auto logits = oracle::add_row_bias(
            oracle::matmul(h, oracle::to_d(w.data()), 2, 3 * 3 * 3, 4), oracle::to_d(b.data()), 2,
            4);
        return oracle::softmax_cross_entropy(logits, labels, 2, 4);
    };
    for (Tensor* t : {&k, &w, &b, &x}) {
        const auto fd = oracle::central_diff(t->mutable_data(), eval);
        CHECK(oracle::grad_agreement(t->grad(), fd, 1e-4) >= 0.99);
    }
}

TEST_CASE("elementwise ops and reshape backward") {
    Rng rng(61);
    Tensor a = random_tensor({3, 2}, rng);
    Tensor b = random_tensor({3, 2}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tape tape;
    Tensor out = mul(add(a, b, &tape), b, &tape);
    Tensor loss = sum(reshape(out, {6}, &tape), &tape);
    tape.backward(loss);
    // d/da (a+b)*b = b ; d/db = a + 2b
    for (int i = 0; i < 6; ++i) {
        CHECK(a.grad()[i] == doctest::Approx(b.data()[i]).epsilon(1e-5));
        CHECK(b.grad()[i] ==
              doctest::Approx(a.data()[i] + 2.0 * b.data()[i]).epsilon(1e-5));
    }
    CHECK_THROWS_AS(add(a, Tensor::zeros({2, 3})), ShapeError);
    CHECK_THROWS_AS(reshape(a, {5}), ShapeError);
}

TEST_CASE("adam zero gradients leave parameters unchanged") {
    Tensor p = Tensor::from_data({3}, {1, 2, 3});
    std::vector<Tensor> params{p};
    AdamState state(params);
    params[0].zero_grad();
    adam_step(params, state, {0.1f});
    CHECK(state.step_count() == 1);
    CHECK(params[0].data()[0] == 1.0f);
    CHECK(params[0].data()[1] == 2.0f);
    CHECK(params[0].data()[2] == 3.0f);
}

TEST_CASE("adam first step moves by about lr and descends on a parabola") {
    Tensor w = Tensor::from_data({1}, {1.0f});
    std::vector<Tensor> params{w};
    AdamState state(params);
    params[0].grad_mut()[0] = 1.0f;
    adam_step(params, state, {0.05f});
    CHECK(params[0].data()[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-3));

    // fresh descent on f(w) = w^2 from w = 1
    Tensor w2 = Tensor::from_data({1}, {1.0f});
    std::vector<Tensor> params2{w2};
    AdamState state2(params2);
    Real prev = 1.0f;
    for (int i = 0; i < 10; ++i) {
        params2[0].zero_grad();
        params2[0].grad_mut()[0] = 2.0f * params2[0].data()[0];
        adam_step(params2, state2, {0.1f});
        CHECK(std::fabs(params2[0].data()[0]) < std::fabs(prev));
        prev = params2[0].data()[0];
    }
}

TEST_CASE("adam rejects mismatched state") {
    Tensor p = Tensor::zeros({3});
    std::vector<Tensor> params{p};
    AdamState state(params);
    std::vector<Tensor> wrong{Tensor::zeros({4})};
    CHECK_THROWS_AS(adam_step(wrong, state, {0.1f}), StateError);
}

TEST_CASE("op pipelines are bit-deterministic") {
    auto run_once = []() {
        Rng rng(77);
        Tensor x = random_tensor({2, 1, 6, 6}, rng);
        Tensor k = random_tensor({2, 1, 3, 3}, rng);
        Tensor out = relu(conv2d(x, k, 1, 1));
        return std::vector<Real>(out.data().begin(), out.data().end());
    };
    CHECK(run_once() == run_once());
}
