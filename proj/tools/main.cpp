#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "memrehearse/errors.hpp"
#include "memrehearse/experiment.hpp"
#include "memrehearse/kernels.hpp"

namespace {

struct CliOverrides {
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    std::string buffer;  // number or "inf"
    std::string policy;
    std::uint32_t tasks = 0;
    std::uint32_t u = 0;
    double k_fraction = 0.0;
};

void add_override_flags(CLI::App* cmd, CliOverrides& overrides) {
    cmd->add_option("--seed", overrides.seeds, "Run seed (repeatable)");
    cmd->add_option("--out", overrides.out_dir, "Output directory");
    cmd->add_option("--buffer", overrides.buffer, "Buffer capacity, or 'inf'");
    cmd->add_option("--policy", overrides.policy,
                    "Buffer policy: reservoir, balanced, bottomk, midk, topk, mixed");
    cmd->add_option("--tasks", overrides.tasks, "Number of tasks in the stream");
    cmd->add_option("--u", overrides.u, "Number of training subsets for the score estimator");
    cmd->add_option("--k-fraction", overrides.k_fraction,
                    "Training subset size as a fraction of the dataset");
}

memrehearse::ExperimentConfig load_config(const std::string& config_path, const std::string& kind,
                                          const CliOverrides& overrides) {
    memrehearse::ExperimentConfig config;
    if (!config_path.empty()) config = memrehearse::parse_config_file(config_path);
    config.kind = kind;
    if (!overrides.seeds.empty()) config.seeds = overrides.seeds;
    if (!overrides.out_dir.empty()) config.out_dir = overrides.out_dir;
    if (!overrides.buffer.empty()) {
        if (overrides.buffer == "inf") {
            config.replay.infinite = true;
        } else {
            config.replay.infinite = false;
            config.replay.capacity = std::stoull(overrides.buffer);
        }
    }
    if (!overrides.policy.empty()) config.replay.policy = memrehearse::parse_policy(overrides.policy);
    if (overrides.tasks != 0) config.tasks = overrides.tasks;
    if (overrides.u != 0) config.estimator.u = overrides.u;
    if (overrides.k_fraction != 0.0) config.estimator.k_fraction = overrides.k_fraction;
    return config;
}

void apply_thread_cap() {
    if (const char* cap = std::getenv("MEMREHEARSE_THREADS")) {
        const int threads = std::atoi(cap);
        if (threads > 0) memrehearse::kernels::set_thread_cap(threads);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual-learning laboratory: memorization scoring and replay buffers"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> compare_configs;
    std::string sweep_axis = "classes";
    CliOverrides overrides;

    CLI::App* run = app.add_subcommand("run", "Train incrementally over a task stream");
    CLI::App* memscore = app.add_subcommand("memscore", "Estimate per-sample memorization scores");
    CLI::App* sweep = app.add_subcommand("sweep", "Sweep class counts or dataset fractions");
    CLI::App* correlate =
        app.add_subcommand("correlate", "Correlate the training-iteration proxy with scores");
    CLI::App* compare = app.add_subcommand("compare", "Compare buffer policies on shared data");
    CLI::App* probe = app.add_subcommand("probe", "Linear-probe feature quality per checkpoint");

    for (CLI::App* cmd : {run, memscore, sweep, correlate, probe}) {
        cmd->add_option("--config", config_path, "JSON config file");
        add_override_flags(cmd, overrides);
    }
    sweep->add_option("--axis", sweep_axis, "Sweep axis: classes or fractions")
        ->check(CLI::IsMember({"classes", "fractions"}));
    compare->add_option("--config", compare_configs, "JSON config file (repeatable)")->required();
    add_override_flags(compare, overrides);

    CLI11_PARSE(app, argc, argv);
    apply_thread_cap();

    try {
        if (compare->parsed()) {
            std::vector<memrehearse::ExperimentConfig> configs;
            for (const std::string& path : compare_configs)
                configs.push_back(load_config(path, "incremental", overrides));
            return memrehearse::compare_policies(configs);
        }
        std::string kind;
        if (run->parsed()) kind = "incremental";
        if (memscore->parsed()) kind = "memscore";
        if (sweep->parsed()) kind = sweep_axis == "classes" ? "sweep_classes" : "sweep_fractions";
        if (correlate->parsed()) kind = "proxy_correlate";
        if (probe->parsed()) kind = "probe";
        return memrehearse::run_experiment(load_config(config_path, kind, overrides));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
