#include "memrehearse/trainer.hpp"

#include <numeric>

#include "memrehearse/errors.hpp"
#include "memrehearse/rng.hpp"

namespace memrehearse {

ModelParams train_stationary(const Dataset& data, const std::vector<std::size_t>& hidden_dims,
                             const TrainConfig& config, std::uint64_t seed) {
    config.validate();
    if (data.size() == 0) throw InputError("train_stationary: empty dataset");

    std::vector<std::size_t> dims;
    dims.push_back(data.dim());
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(data.class_count);

    ModelParams params = init_network(dims, mix_seed(seed, 0));
    Xoshiro256 order_rng(mix_seed(seed, 1));

    std::vector<std::size_t> indices(data.size());
    std::iota(indices.begin(), indices.end(), 0);
    const std::size_t batch = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 0; epoch < config.epochs_per_task; ++epoch) {
        order_rng.shuffle(indices);
        for (std::size_t start = 0; start < indices.size(); start += batch) {
            const std::size_t stop = std::min(start + batch, indices.size());
            Matrix x(stop - start, data.dim());
            std::vector<std::uint32_t> y(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                const std::size_t src = indices[i];
                std::copy(data.features.row_ptr(src), data.features.row_ptr(src) + data.dim(),
                          x.row_ptr(i - start));
                y[i - start] = data.labels[src];
            }
            auto [loss, grads] = loss_and_grads(params, x, y);
            sgd_step(params, grads, config, epoch);
        }
    }
    return params;
}

}  // namespace memrehearse
