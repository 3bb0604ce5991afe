#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mup/model_zoo.hpp"
#include "test_util.hpp"

using namespace mup;

TEST_CASE("container round-trip and structured errors") {
    Container c;
    c.kind = "thing";
    c.attributes = {{"a", "1"}, {"b", ""}};
    c.tensors.emplace_back("x", Tensor({2, 3}, std::vector<Real>{1, -2, 3.5, 0, -0.0, 1e-300}));
    auto bytes = encode(c);
    Container d = decode(bytes);
    CHECK(d.kind == "thing");
    CHECK(d.attributes == c.attributes);
    REQUIRE(d.tensors.size() == 1);
    CHECK(bitwise_equal(d.tensors[0].second, c.tensors[0].second));

    SUBCASE("bad magic") {
        auto b = bytes;
        b[0] = 'X';
        try {
            decode(b);
            FAIL("no throw");
        } catch (const ContainerError& e) {
            CHECK(e.code() == ContainerErrc::bad_magic);
        }
    }
    SUBCASE("version mismatch") {
        auto b = bytes;
        b[4] = 99;
        try {
            decode(b);
            FAIL("no throw");
        } catch (const ContainerError& e) {
            CHECK(e.code() == ContainerErrc::version_mismatch);
        }
    }
    SUBCASE("truncation at every length is detected") {
        for (std::size_t n = 0; n < bytes.size(); ++n) {
            std::vector<std::uint8_t> b(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
            CHECK_THROWS_AS(decode(b), ContainerError);
        }
    }
    SUBCASE("every flipped payload byte is a checksum error") {
        const std::size_t payload_end = bytes.size() - 4;
        const std::size_t payload_start = payload_end - 6 * 8;
        for (std::size_t i = payload_start; i < bytes.size(); ++i) {
            auto b = bytes;
            b[i] ^= 0x10;
            try {
                decode(b);
                FAIL("no throw at byte " << i);
            } catch (const ContainerError& e) {
                CHECK(e.code() == ContainerErrc::checksum_mismatch);
            }
        }
    }
    SUBCASE("any flipped byte never decodes silently") {
        for (std::size_t i = 0; i < bytes.size(); ++i) {
            auto b = bytes;
            b[i] ^= 0x01;
            CHECK_THROWS_AS(decode(b), ContainerError);
        }
    }
}

TEST_CASE("network save/load is a bitwise identity and keeps the layout") {
    ArchSpec arch = arch_preset("cnn", {1, 6, 6}, 4);
    Network net = init_network(arch, 3);
    Network back = load_network(save(net));
    CHECK(bitwise_equal(net, back));
    for (const ParamSlot& s : net.param_slots())
        CHECK(back.global_index(s.name, s.size() - 1) == net.global_index(s.name, s.size() - 1));
    CHECK(save(back) == save(net));

    Container c = decode(save(net));
    c.kind = "dataset";
    CHECK_THROWS_AS(network_from_container(c), ContainerError);
}

TEST_CASE("fan-in uniform initialization bounds") {
    ArchSpec arch = arch_preset("mlp", {1, 4, 4}, 3);
    Network net = init_network(arch, 5);
    auto theta = net.params();
    for (const Layer& L : net.layers()) {
        if (!L.has_params()) continue;
        Real bound = 1 / std::sqrt(static_cast<Real>(L.in_shape[0]));
        for (std::size_t i = 0; i < L.weight_count + L.bias_count; ++i) CHECK(std::abs(theta[L.weight_offset + i]) <= bound);
    }
    CHECK_FALSE(bitwise_equal(init_network(arch, 5), init_network(arch, 6)));
    CHECK(bitwise_equal(init_network(arch, 5), init_network(arch, 5)));
    CHECK_THROWS_AS(arch_preset("resnet", {1, 4, 4}, 3), std::invalid_argument);
}

TEST_CASE("dataset generation") {
    Dataset a = generate_dataset(9, 5, 100, {1, 8, 8});
    Dataset b = generate_dataset(9, 5, 100, {1, 8, 8});
    CHECK(bitwise_equal(a.train.images, b.train.images));
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.train.size() + a.test.size() == 500);
    CHECK(a.test.size() == 100);

    std::vector<std::size_t> train_counts(5), test_counts(5);
    for (auto y : a.train.labels) ++train_counts[y];
    for (auto y : a.test.labels) ++test_counts[y];
    for (int k = 0; k < 5; ++k) {
        CHECK(train_counts[k] == 80);
        CHECK(test_counts[k] == 20);
    }
    for (Real v : a.train.images.data()) REQUIRE((v >= 0 && v <= 255));

    Dataset c = generate_dataset(10, 5, 100, {1, 8, 8});
    CHECK_FALSE(bitwise_equal(a.train.images, c.train.images));

    Dataset round = load_dataset(save(a));
    CHECK(bitwise_equal(round.train.images, a.train.images));
    CHECK(bitwise_equal(round.test.images, a.test.images));
    CHECK(round.test.labels == a.test.labels);
    CHECK(round.classes == 5);

    DatasetSpec bad;
    bad.per_class = 1;
    bad.image_shape = {1, 0, 3};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("untrained model is at chance level") {
    // binomial: 3 sigma around 1/K
    Dataset d = generate_dataset(4, 5, 200, {1, 8, 8});
    std::size_t n = d.test.size();
    Real p = 1.0 / 5, sigma = std::sqrt(p * (1 - p) / static_cast<Real>(n));
    int inside = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        Real acc = accuracy(init_network(arch_preset("mlp", {1, 8, 8}, 5), s), d.test);
        inside += std::abs(acc - p) <= 3 * sigma;
    }
    // an untrained net can prefer one class; allow one of five seeds outside
    CHECK(inside >= 4);
}

TEST_CASE("training") {
    Dataset d = generate_dataset(2, 3, 60, {1, 6, 6});
    ArchSpec arch = arch_preset("cnn", {1, 6, 6}, 3);

    SUBCASE("zero learning rate leaves the initialization") {
        TrainConfig cfg{.epochs = 2, .learning_rate = 0, .batch_size = 16, .seed = 4};
        TrainResult r = train(arch, d, cfg);
        CHECK(bitwise_equal(r.net, init_network(arch, 4)));
    }
    SUBCASE("learns the synthetic task and is reproducible") {
        TrainConfig cfg{.epochs = 8, .learning_rate = 0.05, .batch_size = 16, .seed = 4};
        TrainResult r = train(arch, d, cfg);
        CHECK(r.test_accuracy >= 0.85);
        CHECK(r.epoch_losses.back() < r.epoch_losses.front());
        TrainResult again = train(arch, d, cfg);
        CHECK(save(again.net) == save(r.net));
    }
    SUBCASE("single-class data is learned perfectly") {
        Dataset one = generate_dataset(2, 1, 60, {1, 6, 6});
        TrainResult r = train(arch_preset("mlp", {1, 6, 6}, 1), one, {.epochs = 1, .seed = 1});
        CHECK(r.test_accuracy == 1.0);
    }
    SUBCASE("divergence is reported") {
        TrainConfig cfg{.epochs = 3, .learning_rate = 1e12, .batch_size = 8, .seed = 1};
        CHECK_THROWS_AS(train(arch, d, cfg), TrainingDiverged);
    }
    SUBCASE("mismatched shapes are rejected") {
        CHECK_THROWS_AS(train(arch_preset("cnn", {1, 5, 5}, 3), d, {}), ShapeError);
    }
}

TEST_CASE("distinct seeds give distinct models") {
    Dataset d = generate_dataset(2, 3, 60, {1, 6, 6});
    ArchSpec arch = arch_preset("mlp", {1, 6, 6}, 3);
    TrainConfig cfg{.epochs = 3, .seed = 1};
    Network a = train(arch, d, cfg).net;
    cfg.seed = 2;
    Network b = train(arch, d, cfg).net;
    auto pa = a.params(), pb = b.params();
    Real dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        dot += pa[i] * pb[i];
        na += pa[i] * pa[i];
        nb += pb[i] * pb[i];
    }
    CHECK(dot / std::sqrt(na * nb) < 0.99);
}
