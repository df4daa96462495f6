#include "memrehearse/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "memrehearse/errors.hpp"
#include "memrehearse/kernels.hpp"
#include "memrehearse/rng.hpp"

namespace memrehearse {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
    if (epochs_per_task <= 0) throw ConfigError("epochs_per_task must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (lr_drop_factor <= 0.0) throw ConfigError("lr_drop_factor must be positive");
    for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
        if (lr_drop_epochs[i] < 0 || lr_drop_epochs[i] >= epochs_per_task)
            throw ConfigError("lr_drop_epochs entries must lie in [0, epochs_per_task)");
        if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1])
            throw ConfigError("lr_drop_epochs must be strictly increasing");
    }
}

ModelParams init_network(const std::vector<std::size_t>& layer_dims, std::uint64_t seed) {
    if (layer_dims.size() < 2) throw ConfigError("layer_dims needs at least input and output dims");
    for (std::size_t d : layer_dims)
        if (d == 0) throw ConfigError("layer_dims entries must be >= 1");

    ModelParams params;
    params.layer_dims = layer_dims;
    Xoshiro256 rng(seed);
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        const std::size_t fan_in = layer_dims[l];
        const std::size_t fan_out = layer_dims[l + 1];
        Matrix w(fan_out, fan_in);
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& x : w.data) x = scale * rng.normal();
        params.weights.push_back(std::move(w));
        params.biases.emplace_back(fan_out, 0.0);
        params.weight_velocity.emplace_back(fan_out, fan_in);
        params.bias_velocity.emplace_back(fan_out, 0.0);
    }
    return params;
}

ForwardResult forward(const ModelParams& params, const Matrix& batch) {
    if (batch.cols != params.input_dim())
        throw ShapeError("forward: batch has " + std::to_string(batch.cols) + " columns, expected " +
                         std::to_string(params.input_dim()));

    Matrix activation = batch;
    Matrix features;  // last hidden activation
    const std::size_t layers = params.num_layers();
    for (std::size_t l = 0; l < layers; ++l) {
        Matrix z = kernels::matmul_nt(activation, params.weights[l]);
        kernels::add_row_vector(z, params.biases[l]);
        if (l + 1 < layers) {
            kernels::relu_inplace(z);
            activation = std::move(z);
            if (l + 2 == layers) features = activation;
        } else {
            if (layers == 1) features = batch;  // no hidden layer: inputs are the features
            return {std::move(z), std::move(features)};
        }
    }
    throw StateError("forward: unreachable");
}

namespace {

// Row-wise softmax with logsumexp stabilization; returns mean cross-entropy.
double softmax_xent(Matrix& logits, const std::vector<std::uint32_t>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        double* row = logits.row_ptr(i);
        double maxv = row[0];
        for (std::size_t j = 1; j < logits.cols; ++j) maxv = std::max(maxv, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(row[j] - maxv);
        const double lse = maxv + std::log(sum);
        total += lse - row[labels[i]];
        for (std::size_t j = 0; j < logits.cols; ++j) row[j] = std::exp(row[j] - lse);
    }
    return total / static_cast<double>(logits.rows);
}

}  // namespace

std::pair<double, Gradients> loss_and_grads(const ModelParams& params, const Matrix& batch,
                                            const std::vector<std::uint32_t>& labels) {
    if (labels.size() != batch.rows) throw InputError("loss_and_grads: labels length != batch rows");
    const std::size_t classes = params.class_count();
    for (std::uint32_t y : labels)
        if (y >= classes) throw InputError("loss_and_grads: label " + std::to_string(y) + " out of range");

    // Forward, keeping all post-ReLU activations for backprop.
    const std::size_t layers = params.num_layers();
    std::vector<Matrix> activations;
    activations.reserve(layers);
    activations.push_back(batch);
    for (std::size_t l = 0; l + 1 < layers; ++l) {
        Matrix z = kernels::matmul_nt(activations.back(), params.weights[l]);
        kernels::add_row_vector(z, params.biases[l]);
        kernels::relu_inplace(z);
        activations.push_back(std::move(z));
    }
    Matrix logits = kernels::matmul_nt(activations.back(), params.weights[layers - 1]);
    kernels::add_row_vector(logits, params.biases[layers - 1]);

    const double loss = softmax_xent(logits, labels);  // logits now hold probabilities

    // dL/dlogits = (softmax - onehot) / n
    const double inv_n = 1.0 / static_cast<double>(batch.rows);
    Matrix delta = std::move(logits);
    for (std::size_t i = 0; i < delta.rows; ++i) {
        double* row = delta.row_ptr(i);
        row[labels[i]] -= 1.0;
        for (std::size_t j = 0; j < delta.cols; ++j) row[j] *= inv_n;
    }

    Gradients grads;
    grads.weights.resize(layers);
    grads.biases.resize(layers);
    for (std::size_t l = layers; l-- > 0;) {
        grads.weights[l] = kernels::matmul_tn(delta, activations[l]);
        grads.biases[l] = kernels::column_sums(delta);
        if (l == 0) break;
        Matrix prev_delta = kernels::matmul_nn(delta, params.weights[l]);
        // ReLU mask from the stored activation
        const Matrix& act = activations[l];
        for (std::size_t i = 0; i < prev_delta.data.size(); ++i)
            if (act.data[i] <= 0.0) prev_delta.data[i] = 0.0;
        delta = std::move(prev_delta);
    }
    return {loss, std::move(grads)};
}

double lr_at(const TrainConfig& config, int epoch) {
    double lr = config.learning_rate;
    for (int drop : config.lr_drop_epochs)
        if (drop <= epoch) lr *= config.lr_drop_factor;
    return lr;
}

void sgd_step(ModelParams& params, const Gradients& grads, const TrainConfig& config, int epoch) {
    if (grads.weights.size() != params.num_layers() || grads.biases.size() != params.num_layers())
        throw ShapeError("sgd_step: gradient layer count mismatch");
    const double lr = lr_at(config, epoch);
    for (std::size_t l = 0; l < params.num_layers(); ++l) {
        if (!grads.weights[l].same_shape(params.weights[l]) ||
            grads.biases[l].size() != params.biases[l].size())
            throw ShapeError("sgd_step: gradient shape mismatch at layer " + std::to_string(l));
        Matrix& w = params.weights[l];
        Matrix& wv = params.weight_velocity[l];
        const Matrix& gw = grads.weights[l];
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            wv.data[i] = config.momentum * wv.data[i] + gw.data[i] + config.weight_decay * w.data[i];
            w.data[i] -= lr * wv.data[i];
        }
        auto& b = params.biases[l];
        auto& bv = params.bias_velocity[l];
        const auto& gb = grads.biases[l];
        for (std::size_t i = 0; i < b.size(); ++i) {
            bv[i] = config.momentum * bv[i] + gb[i] + config.weight_decay * b[i];
            b[i] -= lr * bv[i];
        }
    }
}

std::vector<std::uint32_t> predict(const ModelParams& params, const Matrix& batch) {
    const Matrix logits = forward(params, batch).logits;
    std::vector<std::uint32_t> preds(logits.rows);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* row = logits.row_ptr(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols; ++j)
            if (row[j] > row[best]) best = j;
        preds[i] = static_cast<std::uint32_t>(best);
    }
    return preds;
}

bool all_finite(const ModelParams& params) {
    auto finite = [](double x) { return std::isfinite(x); };
    for (const auto& w : params.weights)
        if (!std::all_of(w.data.begin(), w.data.end(), finite)) return false;
    for (const auto& b : params.biases)
        if (!std::all_of(b.begin(), b.end(), finite)) return false;
    for (const auto& v : params.weight_velocity)
        if (!std::all_of(v.data.begin(), v.data.end(), finite)) return false;
    for (const auto& v : params.bias_velocity)
        if (!std::all_of(v.begin(), v.end(), finite)) return false;
    return true;
}

}  // namespace memrehearse
