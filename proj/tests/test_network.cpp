#include <doctest.h>

#include <cmath>
#include <vector>

#include "mup/network.hpp"
#include "test_util.hpp"

using namespace mup;
using mup::testing::random_batch;
using mup::testing::random_network;
using mup::testing::rel_error;

TEST_CASE("layer descriptors round-trip through text") {
    auto specs = parse_layers("conv(8,3,same) relu conv(4,5,valid) relu flatten dense(16) relu dense(5)");
    CHECK(describe_layers(specs) == "conv(8,3,same) relu conv(4,5,valid) relu flatten dense(16) relu dense(5)");
    CHECK_THROWS_AS(parse_layers("dense(0)"), ShapeError);
    CHECK_THROWS_AS(parse_layers("pool(2)"), ShapeError);
    CHECK_THROWS_AS(parse_layers("conv(3,3)"), ShapeError);
    CHECK_THROWS_AS(parse_layers(""), ShapeError);
}

TEST_CASE("shape errors name the offending layer") {
    try {
        Network net({1, 4, 4}, parse_layers("conv(2,3,same) relu dense(3)"));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("layer 2 (dense)") != std::string::npos);
    }
    CHECK_THROWS_AS(Network({1, 2, 2}, parse_layers("conv(2,3,valid) flatten dense(2)")), ShapeError);
    CHECK_THROWS_AS(Network({1, 2, 2}, parse_layers("conv(2,1,same) relu")), ShapeError);

    Network net({1, 2, 2}, parse_layers("flatten dense(3)"));
    Tensor wrong({1, 1, 3, 3});
    CHECK_THROWS_AS(forward(net, wrong), ShapeError);
    std::vector<std::uint8_t> mask(net.param_count() + 1, 1);
    Tensor ok({1, 1, 2, 2});
    CHECK_THROWS_AS(forward(net, ok, {.mask = mask}), ShapeError);
}

TEST_CASE("parameter layout is layer order, weight before bias") {
    Network net({2, 5, 5}, parse_layers("conv(3,3,same) relu flatten dense(4)"));
    const auto& slots = net.param_slots();
    REQUIRE(slots.size() == 4);
    CHECK(slots[0].name == "layer0.weight");
    CHECK(slots[0].offset == 0);
    CHECK(slots[0].size() == 3 * 2 * 9);
    CHECK(slots[1].name == "layer0.bias");
    CHECK(slots[1].offset == 54);
    CHECK(slots[2].name == "layer3.weight");
    CHECK(slots[2].offset == 57);
    CHECK(slots[2].shape == Shape{4, 75});
    CHECK(slots[3].offset == 57 + 300);
    CHECK(net.param_count() == 57 + 300 + 4);
    CHECK(net.global_index("layer3.bias", 2) == 359);
    CHECK(net.is_bias_index(55));
    CHECK_FALSE(net.is_bias_index(56 + 1));
}

TEST_CASE("uniform logits give ln K") {
    Network net({1, 2, 2}, parse_layers("flatten dense(7)"));
    Rng rng(1);
    Batch batch = random_batch(rng, net, 3);
    CHECK(loss(net, batch) == doctest::Approx(std::log(7.0)).epsilon(1e-15));
}

TEST_CASE("zero network has zero input gradient") {
    Network net({1, 3, 3}, parse_layers("conv(2,3,same) relu flatten dense(4)"));
    Rng rng(2);
    Batch batch = random_batch(rng, net, 2);
    GradPair g = backward(net, batch);
    for (Real v : g.grad_input.data()) CHECK(v == 0);
}

TEST_CASE("two-layer forward matches a hand-written matrix product with one weight masked") {
    // input 1x1x3, hidden 2, classes 2
    Network net({1, 1, 3}, parse_layers("flatten dense(2) relu dense(2)"));
    std::vector<Real> theta{
        0.5, -1.0, 2.0,  //
        1.5, 0.25, -0.5,  // W1
        0.1, -0.2,        // b1
        1.0, -2.0,        //
        0.5, 3.0,         // W2
        0.3, -0.1};       // b2
    std::copy(theta.begin(), theta.end(), net.params().begin());
    Tensor x({1, 1, 1, 3}, std::vector<Real>{192, 64, 160});
    std::vector<std::uint8_t> mask(net.param_count(), 1);
    mask[2] = 0;

    // oracle
    Real z[3] = {(192.0 - 128) / 64, (64.0 - 128) / 64, (160.0 - 128) / 64};
    Real h0 = 0.5 * z[0] - 1.0 * z[1] + 0.0 * z[2] + 0.1;
    Real h1 = 1.5 * z[0] + 0.25 * z[1] - 0.5 * z[2] - 0.2;
    h0 = std::max(h0, 0.0);
    h1 = std::max(h1, 0.0);
    Real o0 = 1.0 * h0 - 2.0 * h1 + 0.3;
    Real o1 = 0.5 * h0 + 3.0 * h1 - 0.1;

    Tensor logits = forward(net, x, {.mask = mask});
    CHECK(logits[0] == doctest::Approx(o0).epsilon(1e-14));
    CHECK(logits[1] == doctest::Approx(o1).epsilon(1e-14));
    CHECK(net.params()[2] == 2.0);
}

TEST_CASE("all-ones mask is bitwise the unmasked forward; all-zero mask on a bias-free path is zero") {
    Rng rng(3);
    Network net = random_network(rng, {2, 4, 4}, parse_layers("conv(3,3,same) relu flatten dense(5)"));
    Batch batch = random_batch(rng, net, 4);
    std::vector<std::uint8_t> ones(net.param_count(), 1), zeros(net.param_count(), 0);
    CHECK(bitwise_equal(forward(net, batch.images), forward(net, batch.images, {.mask = ones})));
    Tensor z = forward(net, batch.images, {.mask = zeros});
    for (Real v : z.data()) CHECK(v == 0);
}

TEST_CASE("cross-entropy matches an independent recomputation") {
    Rng rng(4);
    Network net = random_network(rng, {1, 3, 3}, parse_layers("flatten dense(6) relu dense(3)"));
    Batch batch = random_batch(rng, net, 4);
    Tensor logits = forward(net, batch.images);
    long double total = 0;
    for (std::size_t b = 0; b < 4; ++b) {
        long double s = 0;
        for (std::size_t k = 0; k < 3; ++k) s += std::exp(static_cast<long double>(logits[b * 3 + k]));
        total += std::log(s) - logits[b * 3 + batch.labels[b]];
    }
    CHECK(loss(net, batch) == doctest::Approx(static_cast<double>(total / 4)).epsilon(1e-13));
    Real sum = loss(net, batch, {.reduction = Reduction::sum});
    CHECK(sum == doctest::Approx(static_cast<double>(total)).epsilon(1e-13));
}

TEST_CASE("single linear unit, two classes: closed-form gradient") {
    // logits = [w*z + b, 0] with z = (x - 128)/64, label 0
    Network net({1, 1, 1}, parse_layers("flatten dense(2)"));
    auto p = net.params();
    p[0] = 0.7;
    p[1] = 0.0;
    p[2] = 0.2;
    p[3] = 0.0;
    Batch batch{Tensor({1, 1, 1, 1}, std::vector<Real>{200}), {0}};
    Real z = (200.0 - 128) / 64;
    Real a = 0.7 * z + 0.2;
    Real sig = 1 / (1 + std::exp(a));  // 1 - softmax_0
    GradPair g = backward(net, batch);
    CHECK(g.loss == doctest::Approx(std::log(1 + std::exp(-a))).epsilon(1e-14));
    CHECK(g.grad_input[0] == doctest::Approx(-sig * 0.7 / 64).epsilon(1e-13));
    CHECK(g.grad_params[0] == doctest::Approx(-sig * z).epsilon(1e-13));
    CHECK(g.grad_params[2] == doctest::Approx(-sig).epsilon(1e-13));
    CHECK(g.grad_params[3] == doctest::Approx(sig).epsilon(1e-13));
}

TEST_CASE("fd_gradient is exact on a quadratic-free constant coordinate") {
    Network net({1, 2, 2}, parse_layers("flatten dense(3)"));
    Rng rng(5);
    Batch batch = random_batch(rng, net, 2);
    CHECK(fd_gradient(net, batch, {Coordinate::Kind::input, 0}, 1e-3) == 0);
    CHECK_THROWS(fd_gradient(net, batch, {Coordinate::Kind::input, 0}, 0));
}

TEST_CASE("backward matches central differences on random nets") {
    Rng rng(6);
    const char* archs[] = {
        "flatten dense(5) relu dense(4)",
        "conv(3,3,same) relu flatten dense(4)",
        "conv(2,3,valid) relu conv(3,3,same) relu flatten dense(6) relu dense(3)",
    };
    for (const char* arch : archs) {
        CAPTURE(arch);
        Network net = random_network(rng, {2, 5, 5}, parse_layers(arch));
        Batch batch = random_batch(rng, net, 3);
        GradPair g = backward(net, batch);
        for (int i = 0; i < 20; ++i) {
            std::size_t xi = rng.below(batch.images.size());
            Real fd = fd_gradient(net, batch, {Coordinate::Kind::input, xi}, 1e-2);
            CHECK(rel_error(g.grad_input[xi], fd, 1e-9) < 1e-6);
            std::size_t pi = rng.below(net.param_count());
            Real fdp = fd_gradient(net, batch, {Coordinate::Kind::param, pi}, 1e-5);
            CHECK(rel_error(g.grad_params[pi], fdp, 1e-9) < 1e-6);
        }
    }
}

TEST_CASE("masked backward equals backward on physically masked parameters") {
    Rng rng(8);
    Network net = random_network(rng, {1, 4, 4}, parse_layers("conv(2,3,same) relu flatten dense(3)"));
    Batch batch = random_batch(rng, net, 2);
    std::vector<std::uint8_t> mask(net.param_count());
    for (auto& m : mask) m = rng.uniform() < 0.7;
    Network hard = net;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (!mask[i]) hard.params()[i] = 0;
    GradPair soft_g = backward(net, batch, {.mask = mask});
    GradPair hard_g = backward(hard, batch);
    CHECK(bitwise_equal(soft_g.grad_input, hard_g.grad_input));
    CHECK(soft_g.loss == hard_g.loss);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) CHECK(soft_g.grad_params[i] == hard_g.grad_params[i]);
        else CHECK(soft_g.grad_params[i] == 0);
    }
}

TEST_CASE("dropout plan scales activations and gradients consistently") {
    Rng rng(9);
    Network net = random_network(rng, {1, 3, 3}, parse_layers("flatten dense(6) relu dense(3)"));
    Batch batch = random_batch(rng, net, 2);
    DropoutPlan plan{{std::vector<Real>(6, 1.25)}};
    plan.factors[0][2] = 0;
    EvalOptions opts{.dropout = &plan};
    GradPair g = backward(net, batch, opts);
    for (int i = 0; i < 5; ++i) {
        std::size_t xi = rng.below(batch.images.size());
        CHECK(rel_error(g.grad_input[xi], fd_gradient(net, batch, {Coordinate::Kind::input, xi}, 1e-2, opts),
                        1e-9) < 1e-6);
    }
    DropoutPlan bad{{std::vector<Real>(5, 1)}};
    CHECK_THROWS_AS(forward(net, batch.images, {.dropout = &bad}), ShapeError);
}

TEST_CASE("sum reduction gradient is batch size times the mean gradient") {
    Rng rng(10);
    Network net = random_network(rng, {1, 3, 3}, parse_layers("flatten dense(4)"));
    Batch batch = random_batch(rng, net, 4);
    GradPair m = backward(net, batch);
    GradPair s = backward(net, batch, {.reduction = Reduction::sum});
    for (std::size_t i = 0; i < m.grad_input.size(); ++i)
        CHECK(s.grad_input[i] == doctest::Approx(4 * m.grad_input[i]).epsilon(1e-14));
}

TEST_CASE("forward is deterministic") {
    Rng rng(12);
    Network net = random_network(rng, {2, 6, 6}, parse_layers("conv(4,3,same) relu flatten dense(5)"));
    Batch batch = random_batch(rng, net, 3);
    GradPair a = backward(net, batch), b = backward(net, batch);
    CHECK(bitwise_equal(a.grad_input, b.grad_input));
    CHECK(bitwise_equal(std::span<const Real>(a.grad_params), std::span<const Real>(b.grad_params)));
}

TEST_CASE("validate_batch rejects out-of-range pixels and labels") {
    Network net({1, 2, 2}, parse_layers("flatten dense(3)"));
    Batch ok{Tensor({1, 1, 2, 2}, 10.0), {2}};
    CHECK_NOTHROW(validate_batch(net, ok));
    Batch bad_label{Tensor({1, 1, 2, 2}, 10.0), {3}};
    CHECK_THROWS_AS(validate_batch(net, bad_label), ShapeError);
    Batch bad_pixel{Tensor({1, 1, 2, 2}, 256.0), {0}};
    CHECK_THROWS_AS(validate_batch(net, bad_pixel), ShapeError);
}
