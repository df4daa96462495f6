#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "memrehearse/nn.hpp"
#include "memrehearse/rng.hpp"
#include "memrehearse/trainer.hpp"

using namespace memrehearse;

namespace {

Matrix random_batch(std::size_t rows, std::size_t cols, Xoshiro256& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.normal();
    return m;
}

std::vector<std::uint32_t> random_labels(std::size_t n, std::uint32_t classes, Xoshiro256& rng) {
    std::vector<std::uint32_t> labels(n);
    for (auto& label : labels) label = static_cast<std::uint32_t>(rng.uniform_int(classes));
    return labels;
}

// Central finite differences over every parameter of the network.
double max_relative_gradient_error(ModelParams params, const Matrix& batch,
                                   const std::vector<std::uint32_t>& labels) {
    const double h = 1e-5;
    const Gradients analytic = loss_and_grads(params, batch, labels).second;
    double worst = 0.0;
    auto probe = [&](double& value, double analytic_grad) {
        const double saved = value;
        value = saved + h;
        const double up = loss_and_grads(params, batch, labels).first;
        value = saved - h;
        const double down = loss_and_grads(params, batch, labels).first;
        value = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(numeric), std::abs(analytic_grad), 1e-8});
        worst = std::max(worst, std::abs(numeric - analytic_grad) / scale);
    };
    for (std::size_t l = 0; l < params.num_layers(); ++l) {
        for (std::size_t i = 0; i < params.weights[l].data.size(); ++i)
            probe(params.weights[l].data[i], analytic.weights[l].data[i]);
        for (std::size_t i = 0; i < params.biases[l].size(); ++i)
            probe(params.biases[l][i], analytic.biases[l][i]);
    }
    return worst;
}

}  // namespace

TEST_CASE("init_network shapes and determinism") {
    const ModelParams a = init_network({4, 8, 3}, 5);
    REQUIRE(a.num_layers() == 2);
    CHECK(a.weights[0].rows == 8);
    CHECK(a.weights[0].cols == 4);
    CHECK(a.weights[1].rows == 3);
    CHECK(a.weights[1].cols == 8);
    for (const auto& b : a.biases)
        for (double v : b) CHECK(v == 0.0);
    const ModelParams b = init_network({4, 8, 3}, 5);
    CHECK(a == b);
    const ModelParams c = init_network({4, 8, 3}, 6);
    CHECK(a.weights[0].data != c.weights[0].data);
}

TEST_CASE("forward pass matches a hand computation") {
    // 2-2-2 network with fixed weights; one input row.
    ModelParams params = init_network({2, 2, 2}, 0);
    params.weights[0].data = {1.0, -1.0, 0.5, 2.0};
    params.biases[0] = {0.0, -1.0};
    params.weights[1].data = {1.0, 1.0, -1.0, 0.0};
    params.biases[1] = {0.5, 0.0};
    Matrix batch(1, 2);
    batch.data = {2.0, 1.0};
    // hidden pre: [2*1 + 1*(-1), 2*0.5 + 1*2 - 1] = [1, 2]; relu keeps both
    // logits: [1 + 2 + 0.5, -1 + 0] = [3.5, -1]
    const ForwardResult result = forward(params, batch);
    CHECK(result.features.at(0, 0) == doctest::Approx(1.0));
    CHECK(result.features.at(0, 1) == doctest::Approx(2.0));
    CHECK(result.logits.at(0, 0) == doctest::Approx(3.5));
    CHECK(result.logits.at(0, 1) == doctest::Approx(-1.0));
    CHECK(predict(params, batch) == std::vector<std::uint32_t>{0});
}

TEST_CASE("uniform logits give loss ln(c)") {
    ModelParams params = init_network({3, 4}, 1);
    for (auto& w : params.weights) w.data.assign(w.data.size(), 0.0);
    Matrix batch(5, 3);
    Xoshiro256 rng(2);
    for (double& v : batch.data) v = rng.normal();
    const auto [loss, grads] = loss_and_grads(params, batch, {0, 1, 2, 3, 0});
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    (void)grads;
}

TEST_CASE("analytic gradients match finite differences on 20 random networks") {
    Xoshiro256 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 2 + rng.uniform_int(4);
        const std::size_t h = 2 + rng.uniform_int(5);
        const std::uint32_t c = 2 + static_cast<std::uint32_t>(rng.uniform_int(3));
        std::vector<std::size_t> dims = {d, h, c};
        if (trial % 3 == 0) dims = {d, h, h, c};  // two hidden layers
        if (trial % 5 == 0) dims = {d, c};        // linear model
        ModelParams params = init_network(dims, 1000 + trial);
        const std::size_t n = 1 + rng.uniform_int(6);
        const Matrix batch = random_batch(n, d, rng);
        const auto labels = random_labels(n, c, rng);
        CHECK(max_relative_gradient_error(params, batch, labels) < 1e-4);
    }
}

TEST_CASE("sgd_step reproduces the scalar momentum recursion") {
    ModelParams params = init_network({1, 1}, 0);
    params.weights[0].data = {1.0};
    params.biases[0] = {0.0};
    TrainConfig config;
    config.learning_rate = 0.1;
    config.momentum = 0.9;
    config.weight_decay = 0.01;
    config.lr_drop_epochs = {};

    Gradients grads;
    grads.weights.push_back(Matrix(1, 1));
    grads.weights[0].data = {2.0};
    grads.biases.push_back({0.0});

    // v1 = 0.9*0 + 2 + 0.01*1 = 2.01 ; w1 = 1 - 0.1*2.01 = 0.799
    sgd_step(params, grads, config, 0);
    CHECK(params.weights[0].data[0] == doctest::Approx(0.799).epsilon(1e-12));
    // v2 = 0.9*2.01 + 2 + 0.01*0.799 = 3.81699 ; w2 = 0.799 - 0.381699
    sgd_step(params, grads, config, 0);
    CHECK(params.weights[0].data[0] == doctest::Approx(0.799 - 0.381699).epsilon(1e-12));
}

TEST_CASE("learning-rate schedule steps down at the configured epochs") {
    TrainConfig config;
    config.learning_rate = 0.1;
    config.lr_drop_epochs = {35, 45};
    config.lr_drop_factor = 0.1;
    CHECK(lr_at(config, 0) == doctest::Approx(0.1));
    CHECK(lr_at(config, 34) == doctest::Approx(0.1));
    CHECK(lr_at(config, 35) == doctest::Approx(0.01));
    CHECK(lr_at(config, 44) == doctest::Approx(0.01));
    CHECK(lr_at(config, 45) == doctest::Approx(0.001));
    CHECK(lr_at(config, 49) == doctest::Approx(0.001));
}

TEST_CASE("prediction ties resolve to the lowest class id") {
    ModelParams params = init_network({2, 3}, 0);
    for (auto& w : params.weights) w.data.assign(w.data.size(), 0.0);
    Matrix batch(1, 2);
    batch.data = {1.0, 1.0};
    CHECK(predict(params, batch) == std::vector<std::uint32_t>{0});
}

TEST_CASE("training on a separable set drives the loss down") {
    Dataset data;
    data.class_count = 2;
    data.features = Matrix(40, 2);
    Xoshiro256 rng(5);
    for (std::size_t i = 0; i < 40; ++i) {
        const std::uint32_t label = i < 20 ? 0 : 1;
        data.features.at(i, 0) = (label == 0 ? -3.0 : 3.0) + 0.3 * rng.normal();
        data.features.at(i, 1) = 0.3 * rng.normal();
        data.labels.push_back(label);
        data.sample_ids.push_back(i);
        data.provenance.push_back(0);
    }
    TrainConfig config;
    config.epochs_per_task = 20;
    config.batch_size = 8;
    config.lr_drop_epochs = {};
    ModelParams initial = init_network({2, 8, 2}, 0);
    const double loss_before = loss_and_grads(initial, data.features, data.labels).first;
    const ModelParams trained = train_stationary(data, {8}, config, 3);
    const double loss_after = loss_and_grads(trained, data.features, data.labels).first;
    CHECK(loss_after < loss_before * 0.2);
    CHECK(all_finite(trained));
    CHECK(predict(trained, data.features) == data.labels);
}

TEST_CASE("stationary training is deterministic in the seed") {
    Dataset data;
    data.class_count = 3;
    data.features = Matrix(30, 4);
    Xoshiro256 rng(8);
    for (std::size_t i = 0; i < 30; ++i) {
        for (std::size_t j = 0; j < 4; ++j) data.features.at(i, j) = rng.normal();
        data.labels.push_back(static_cast<std::uint32_t>(i % 3));
        data.sample_ids.push_back(i);
        data.provenance.push_back(0);
    }
    TrainConfig config;
    config.epochs_per_task = 5;
    config.lr_drop_epochs.clear();
    config.batch_size = 8;
    const ModelParams a = train_stationary(data, {8}, config, 7);
    const ModelParams b = train_stationary(data, {8}, config, 7);
    CHECK(a == b);
    const ModelParams c = train_stationary(data, {8}, config, 8);
    CHECK(a.weights[0].data != c.weights[0].data);
}

TEST_CASE("invalid train configs are rejected") {
    TrainConfig config;
    config.learning_rate = 0.0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = TrainConfig{};
    config.batch_size = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = TrainConfig{};
    config.epochs_per_task = -1;
    CHECK_THROWS_AS(config.validate(), ConfigError);
}
