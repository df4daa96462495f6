#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "memrehearse/data.hpp"
#include "memrehearse/nn.hpp"

namespace memrehearse {

// u random size-k training subsets of an n-sample dataset.
struct SubsetPlan {
    std::size_t n = 0;
    std::size_t k = 0;
    std::size_t u = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::uint8_t>> membership;  // u rows of length n

    std::vector<std::uint32_t> subset_indices(std::size_t row) const;
};

struct MemScoreTable {
    std::vector<std::uint64_t> sample_ids;
    std::vector<double> scores;  // in [-1, 1]
    std::vector<std::uint32_t> include_count;
    std::vector<std::uint32_t> exclude_count;
    double k_over_n = 0.0;
    std::uint32_t u = 0;

    double score_for(std::uint64_t sample_id) const;
};

constexpr std::int64_t kNeverLearned = std::numeric_limits<std::int64_t>::max();

// First iteration after which a sample stayed correctly classified for the
// rest of training; kNeverLearned if it ended misclassified.
struct ProxyScoreTable {
    std::vector<std::uint64_t> sample_ids;
    std::vector<std::int64_t> v;
    std::int64_t total_iterations = 0;
    std::int64_t last_iteration = -1;
    std::unordered_map<std::uint64_t, std::size_t> index;

    static ProxyScoreTable create(const std::vector<std::uint64_t>& sample_ids);

    bool operator==(const ProxyScoreTable& other) const {
        return sample_ids == other.sample_ids && v == other.v;
    }
};

SubsetPlan plan_subsets(std::size_t n, std::size_t k, std::size_t u, std::uint64_t seed);

// Trains on the given row subset of the dataset and reports per-sample
// correctness (indicator, or correct-label probability in softmax mode)
// over every sample of the dataset.
using SubsetTrainer = std::function<std::vector<double>(
    const Dataset& data, const std::vector<std::uint32_t>& train_rows, std::uint64_t seed)>;

// Subset trainings run concurrently; aggregation folds in subset-index order
// so completion order never changes the output.
MemScoreTable feldman_estimate(const Dataset& dataset, const SubsetTrainer& trainer,
                               const SubsetPlan& plan);

struct MlpTrainerOptions {
    std::vector<std::size_t> hidden_dims = {64, 64};
    TrainConfig train;
    bool softmax_probability = false;  // default: argmax correctness indicator
};

SubsetTrainer make_mlp_trainer(const MlpTrainerOptions& options);

void proxy_observe(ProxyScoreTable& table, std::int64_t iteration,
                   const std::vector<std::uint64_t>& sample_ids,
                   const std::vector<std::uint8_t>& correct);

// Distance of one point to a class Gaussian; cov gets eps*I with
// eps = 1e-6 * trace(cov)/d before the solve.
double mahalanobis_distance(const std::vector<double>& point, const std::vector<double>& mean,
                            const Matrix& covariance);

std::vector<double> mahalanobis_proxy(const Matrix& features,
                                      const std::vector<std::uint32_t>& labels);

std::vector<std::uint64_t> select_memorized(const MemScoreTable& table, double threshold);

struct Histogram {
    std::vector<double> edges;  // bin_count + 1
    std::vector<std::size_t> counts;
};

// Uniform bins over [-1, 1]; the final bin is right-closed.
Histogram memscore_histogram(const std::vector<double>& scores, std::size_t bin_count);

struct SweepEntry {
    double parameter = 0.0;  // class count or dataset fraction
    std::size_t probe_samples = 0;
    double mean_score = 0.0;
    double fraction_above_025 = 0.0;
    double fraction_above_01 = 0.0;
    Histogram histogram;
};

struct EstimatorConfig {
    double k_fraction = 0.5;
    std::uint32_t u = 250;
    std::uint64_t seed = 0;
};

struct SweepReport {
    std::string kind;  // "classes" or "fractions"
    EstimatorConfig estimator;
    std::vector<SweepEntry> entries;
};

// Scores are always probed on the first min(class_counts) classes so the
// same samples are compared across the sweep.
SweepReport sweep_class_counts(const Dataset& dataset, const std::vector<std::uint32_t>& class_counts,
                               const EstimatorConfig& config, const SubsetTrainer& trainer);

SweepReport sweep_fractions(const Dataset& dataset, const std::vector<double>& fractions,
                            const EstimatorConfig& config, const SubsetTrainer& trainer);

void save_memscore_csv(const MemScoreTable& table, const std::string& path);
void save_proxy_csv(const ProxyScoreTable& table, const std::string& path);

}  // namespace memrehearse
