#pragma once

#include <string>
#include <vector>

#include "memrehearse/data.hpp"
#include "memrehearse/memorization.hpp"
#include "memrehearse/replay.hpp"

namespace memrehearse {

// One experiment family per kind: incremental, memscore, sweep_classes,
// sweep_fractions, proxy_correlate, probe.
struct ExperimentConfig {
    std::string kind = "incremental";

    std::string dataset_path;  // load MRDS when set, otherwise generate
    LongTailSpec longtail;

    std::uint32_t tasks = 5;

    TrainConfig train;
    std::vector<std::size_t> hidden_dims = {64, 64};

    ReplayConfig replay;
    EstimatorConfig estimator;
    double threshold = 0.25;

    std::vector<std::uint32_t> class_counts = {2, 4, 8};
    std::vector<double> fractions = {0.1, 0.5, 0.9};
    std::uint32_t probe_task = 0;  // 0 = middle task

    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string out_dir = "out";

    void validate() const;
};

// Strict JSON parsing: unknown keys are rejected with their path.
ExperimentConfig parse_config_json(const std::string& json_text);
ExperimentConfig parse_config_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);

Dataset build_dataset(const ExperimentConfig& config);

// Runs the configured experiment once per seed, writes per-seed artifacts
// and an aggregate with mean and sample std per metric. Returns the exit
// status (0 on success).
int run_experiment(const ExperimentConfig& config);

// Policies must differ only in buffer policy / size; writes a policy x
// (Acc, FM) comparison table under the first config's out_dir.
int compare_policies(const std::vector<ExperimentConfig>& configs);

struct Aggregate {
    double mean = 0.0;
    double std_dev = 0.0;  // sample standard deviation over seeds
};

Aggregate aggregate_values(const std::vector<double>& values);

}  // namespace memrehearse
