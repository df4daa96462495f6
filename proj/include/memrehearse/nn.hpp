#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "memrehearse/matrix.hpp"

namespace memrehearse {

// Feedforward ReLU classifier parameters, including SGD momentum state.
// Values throughout; copying a ModelParams clones the full training state.
struct ModelParams {
    std::vector<std::size_t> layer_dims;
    std::vector<Matrix> weights;               // weights[l]: (dims[l+1], dims[l])
    std::vector<std::vector<double>> biases;   // biases[l]: (dims[l+1])
    std::vector<Matrix> weight_velocity;
    std::vector<std::vector<double>> bias_velocity;

    std::size_t num_layers() const { return weights.size(); }
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t class_count() const { return layer_dims.back(); }

    bool operator==(const ModelParams& other) const = default;
};

struct TrainConfig {
    double learning_rate = 0.1;
    double momentum = 0.0;
    double weight_decay = 0.0;
    int epochs_per_task = 50;
    int batch_size = 32;
    std::vector<int> lr_drop_epochs = {35, 45};
    double lr_drop_factor = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

struct ForwardResult {
    Matrix logits;
    Matrix features;  // penultimate activations, post-ReLU
};

ModelParams init_network(const std::vector<std::size_t>& layer_dims, std::uint64_t seed);

ForwardResult forward(const ModelParams& params, const Matrix& batch);

std::pair<double, Gradients> loss_and_grads(const ModelParams& params, const Matrix& batch,
                                            const std::vector<std::uint32_t>& labels);

// velocity <- momentum*velocity + grad + weight_decay*param
// param    <- param - lr_at(epoch)*velocity
void sgd_step(ModelParams& params, const Gradients& grads, const TrainConfig& config, int epoch);

double lr_at(const TrainConfig& config, int epoch);

// Argmax prediction per batch row; ties resolve to the lowest class id.
std::vector<std::uint32_t> predict(const ModelParams& params, const Matrix& batch);

bool all_finite(const ModelParams& params);

}  // namespace memrehearse
