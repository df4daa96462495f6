#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "memrehearse/matrix.hpp"

namespace memrehearse {

// Immutable after construction; safe for concurrent read.
struct Dataset {
    Matrix features;                        // n x d
    std::vector<std::uint32_t> labels;      // in [0, class_count)
    std::vector<std::uint64_t> sample_ids;  // unique, stable across subsetting
    std::uint32_t class_count = 0;
    std::vector<std::uint8_t> provenance;   // 0 = head, 1 = tail

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols; }

    Dataset take(const std::vector<std::size_t>& row_indices) const;

    bool operator==(const Dataset& other) const = default;
};

struct TaskStream {
    std::vector<Dataset> tasks;
    std::vector<std::uint32_t> class_order;
    std::uint32_t classes_per_task = 0;
};

struct LongTailSpec {
    std::uint32_t class_count = 10;
    std::uint32_t head_samples_per_class = 100;
    std::uint32_t tail_clusters_per_class = 2;
    std::uint32_t tail_samples_per_cluster = 3;
    std::uint32_t feature_dim = 16;
    double head_spread = 1.0;
    double tail_offset = 4.0;
    double noise = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

// Per class: one head Gaussian plus tail_clusters_per_class small clusters
// displaced tail_offset along random unit directions. Sample ids are assigned
// in generation order starting at 0.
Dataset generate_longtail(const LongTailSpec& spec);

TaskStream split_tasks(const Dataset& dataset, std::uint32_t num_tasks, std::uint64_t seed);

// Labels are not remapped; class identity stays stable across sweeps.
Dataset subset_classes(const Dataset& dataset, const std::unordered_set<std::uint32_t>& class_ids);

// Stratified: floor(fraction * n_class) samples per class.
Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed);

// Stratified split into (train, test) with the given test fraction.
std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double test_fraction,
                                             std::uint64_t seed);

void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);
void export_dataset_csv(const Dataset& dataset, const std::string& path);

}  // namespace memrehearse
