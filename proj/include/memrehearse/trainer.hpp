#pragma once

#include <cstdint>
#include <vector>

#include "memrehearse/data.hpp"
#include "memrehearse/nn.hpp"

namespace memrehearse {

// Stationary training on a single dataset: shuffled minibatches, the step
// learning-rate schedule, epochs_per_task epochs. The classifier head is
// sized to the dataset's full class universe.
ModelParams train_stationary(const Dataset& data, const std::vector<std::size_t>& hidden_dims,
                             const TrainConfig& config, std::uint64_t seed);

}  // namespace memrehearse
