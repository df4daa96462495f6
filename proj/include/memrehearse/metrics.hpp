#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "memrehearse/data.hpp"
#include "memrehearse/nn.hpp"

namespace memrehearse {

// Lower-triangular: rows[i][j] = accuracy on task j's test split after
// training task i, defined for j <= i only.
struct AccuracyMatrix {
    std::vector<std::vector<double>> rows;

    std::size_t checkpoints() const { return rows.size(); }
    double at(std::size_t checkpoint, std::size_t task) const;
    void append_checkpoint(std::vector<double> accuracies);
};

struct MetricsReport {
    double acc = 0.0;
    double fm = 0.0;
    AccuracyMatrix matrix;
};

double evaluate_accuracy(const ModelParams& params, const Dataset& dataset);

double final_avg_accuracy(const AccuracyMatrix& matrix);

// Mean over tasks 0..K-2 of (best-ever accuracy - final accuracy). The
// last task's maximum is its final value by construction, so it is skipped.
double forgetting_measure(const AccuracyMatrix& matrix);

// Per task: accuracy on its memorized training samples and on its test
// split, at every checkpoint. A curve is absent (nullopt throughout) when
// the memorized subset is empty.
struct MemorizedCurves {
    std::vector<std::vector<std::optional<double>>> memorized_acc;  // [task][checkpoint]
    std::vector<std::vector<double>> test_acc;                      // [task][checkpoint]
};

MemorizedCurves memorized_subset_curves(const std::vector<ModelParams>& checkpoints,
                                        const std::vector<Dataset>& train_splits,
                                        const std::vector<Dataset>& test_splits,
                                        const std::vector<std::vector<std::uint64_t>>& memorized_ids);

struct ProbeConfig {
    double learning_rate = 0.5;
    int max_epochs = 500;
    double tolerance = 1e-6;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct ProbeResult {
    Matrix weights;  // (classes, feature dim)
    std::vector<double> biases;
    double accuracy = 0.0;  // held-out
};

// Multinomial logistic regression by full-batch gradient descent on frozen
// features, evaluated on a stratified held-out split.
ProbeResult train_linear_probe(const Matrix& features, const std::vector<std::uint32_t>& labels,
                               const ProbeConfig& config);

enum class CorrelationMethod { pearson, spearman, kendall };

// kendall is tau-b (tie-corrected); spearman uses average ranks.
double correlate(const std::vector<double>& x, const std::vector<double>& y,
                 CorrelationMethod method);

void save_accuracy_matrix_csv(const AccuracyMatrix& matrix, const std::string& path);
void save_curves_csv(const MemorizedCurves& curves, const std::string& path);

}  // namespace memrehearse
