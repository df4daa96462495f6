// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Exact property checks where closed forms exist, directional
// statistical checks for the learning-dynamics criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "memrehearse/data.hpp"
#include "memrehearse/experiment.hpp"
#include "memrehearse/kernels.hpp"
#include "memrehearse/memorization.hpp"
#include "memrehearse/metrics.hpp"
#include "memrehearse/nn.hpp"
#include "memrehearse/replay.hpp"
#include "memrehearse/rng.hpp"

using namespace memrehearse;

namespace {

int failures = 0;

void report(int number, const char* name, bool pass, double seconds) {
    std::printf("criterion %2d [%s]: %s (%.1fs)\n", number, name, pass ? "PASS" : "FAIL", seconds);
    if (!pass) ++failures;
}

template <typename F>
void run_criterion(int number, const char* name, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    bool pass = false;
    try {
        pass = body();
    } catch (const std::exception& e) {
        std::printf("criterion %2d threw: %s\n", number, e.what());
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report(number, name, pass, seconds);
}

double mean_of(const std::vector<double>& values) {
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Xoshiro256& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.normal();
    return m;
}

// --- criterion 1: gradient oracle ------------------------------------------

// The loss is not differentiable at ReLU kinks, so a central difference is
// only a valid oracle when every hidden preactivation clears the step size.
double min_preactivation_margin(const ModelParams& params, const Matrix& batch) {
    double margin = std::numeric_limits<double>::infinity();
    Matrix activation = batch;
    for (std::size_t l = 0; l + 1 < params.num_layers(); ++l) {
        Matrix z = kernels::matmul_nt(activation, params.weights[l]);
        kernels::add_row_vector(z, params.biases[l]);
        for (double v : z.data) margin = std::min(margin, std::abs(v));
        kernels::relu_inplace(z);
        activation = std::move(z);
    }
    return margin;
}

bool gradient_oracle() {
    Xoshiro256 rng(51);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 2 + rng.uniform_int(5);
        const std::size_t h = 2 + rng.uniform_int(6);
        const std::uint32_t c = 2 + static_cast<std::uint32_t>(rng.uniform_int(4));
        std::vector<std::size_t> dims = {d, h, c};
        if (trial % 4 == 0) dims = {d, h, h, c};
        const std::size_t n = 1 + rng.uniform_int(5);

        ModelParams params = init_network(dims, 7000 + trial);
        Matrix batch = random_matrix(n, d, rng);
        for (int redraw = 0; min_preactivation_margin(params, batch) < 1e-2; ++redraw) {
            if (redraw > 1000) return false;
            batch = random_matrix(n, d, rng);
        }
        std::vector<std::uint32_t> labels(n);
        for (auto& label : labels) label = static_cast<std::uint32_t>(rng.uniform_int(c));

        const Gradients analytic = loss_and_grads(params, batch, labels).second;
        const double step = 1e-5;
        auto probe = [&](double& value, double grad) {
            const double saved = value;
            value = saved + step;
            const double up = loss_and_grads(params, batch, labels).first;
            value = saved - step;
            const double down = loss_and_grads(params, batch, labels).first;
            value = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double scale = std::max({std::abs(numeric), std::abs(grad), 1e-8});
            return std::abs(numeric - grad) / scale;
        };
        for (std::size_t l = 0; l < params.num_layers(); ++l) {
            for (std::size_t i = 0; i < params.weights[l].data.size(); ++i)
                if (probe(params.weights[l].data[i], analytic.weights[l].data[i]) > 1e-4)
                    return false;
            for (std::size_t i = 0; i < params.biases[l].size(); ++i)
                if (probe(params.biases[l][i], analytic.biases[l][i]) > 1e-4) return false;
        }
    }
    return true;
}

// --- criterion 2: estimator extremes ---------------------------------------

Dataset stub_dataset(std::size_t n) {
    Dataset data;
    data.class_count = 2;
    data.features = Matrix(n, 2);
    Xoshiro256 rng(31);
    for (std::size_t i = 0; i < n; ++i) {
        data.features.at(i, 0) = rng.normal();
        data.features.at(i, 1) = rng.normal();
        data.labels.push_back(static_cast<std::uint32_t>(i % 2));
        data.sample_ids.push_back(i);
        data.provenance.push_back(0);
    }
    return data;
}

bool estimator_extremes() {
    const Dataset data = stub_dataset(40);
    const auto plan = plan_subsets(40, 20, 50, 12);
    const SubsetTrainer memorizer = [](const Dataset& d, const std::vector<std::uint32_t>& rows,
                                       std::uint64_t) {
        std::vector<double> correct(d.size(), 0.0);
        for (std::uint32_t r : rows) correct[r] = 1.0;
        return correct;
    };
    const MemScoreTable top = feldman_estimate(data, memorizer, plan);
    for (double score : top.scores)
        if (score != 1.0) return false;

    const SubsetTrainer constant = [](const Dataset& d, const std::vector<std::uint32_t>&,
                                      std::uint64_t) {
        return std::vector<double>(d.size(), 1.0);
    };
    const MemScoreTable flat = feldman_estimate(data, constant, plan);
    for (double score : flat.scores)
        if (score != 0.0) return false;
    return true;
}

// --- criterion 3: estimator concentration ----------------------------------

bool estimator_concentration() {
    const Dataset data = stub_dataset(40);
    const SubsetTrainer stub = [](const Dataset& d, const std::vector<std::uint32_t>& rows,
                                  std::uint64_t seed) {
        Xoshiro256 rng(seed);
        std::vector<double> included(d.size(), 0.0);
        for (std::uint32_t r : rows) included[r] = 1.0;
        std::vector<double> correct(d.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            correct[i] = rng.uniform() < (included[i] != 0.0 ? 0.9 : 0.3) ? 1.0 : 0.0;
        return correct;
    };

    const std::size_t plans = 100;
    std::vector<std::vector<double>> per_sample(data.size());
    for (std::size_t p = 0; p < plans; ++p) {
        const auto plan = plan_subsets(data.size(), data.size() / 2, 250, 9000 + p);
        const MemScoreTable table = feldman_estimate(data, stub, plan);
        for (std::size_t i = 0; i < data.size(); ++i) per_sample[i].push_back(table.scores[i]);
    }
    for (const auto& scores : per_sample) {
        const double mean = mean_of(scores);
        double ss = 0.0;
        for (double s : scores) ss += (s - mean) * (s - mean);
        const double std_dev = std::sqrt(ss / static_cast<double>(scores.size() - 1));
        if (std_dev >= 0.13) return false;
    }
    return true;
}

// --- criterion 4: reservoir uniformity --------------------------------------

bool reservoir_uniformity() {
    const std::size_t n = 1000, m = 100, trials = 2000;
    std::vector<std::size_t> retained(n, 0);
    for (std::size_t trial = 0; trial < trials; ++trial) {
        MemoryBuffer buffer(m, false, 40000 + trial);
        for (std::size_t i = 0; i < n; ++i) {
            BufferEntry e;
            e.sample_id = i;
            e.features = {0.0};
            reservoir_insert(buffer, std::move(e));
        }
        for (const BufferEntry& e : buffer.entries) retained[e.sample_id]++;
    }
    // 99% family-wise band: Bonferroni over the 1000 positions gives a
    // per-position quantile of 1 - 0.01/2000, i.e. z ~ 4.42
    const double p = static_cast<double>(m) / static_cast<double>(n);
    const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
    const double z = 4.42;
    for (std::size_t i = 0; i < n; ++i) {
        const double freq = static_cast<double>(retained[i]) / static_cast<double>(trials);
        if (freq < p - z * sigma || freq > p + z * sigma) return false;
    }
    return true;
}

// --- criterion 5: balanced buffer invariants --------------------------------

bool balanced_invariants() {
    Xoshiro256 setup(77);
    for (int stream = 0; stream < 1000; ++stream) {
        const std::size_t capacity = 2 + setup.uniform_int(30);
        const std::uint32_t classes = 2 + static_cast<std::uint32_t>(setup.uniform_int(4));
        const double skew = 0.5 + 0.45 * setup.uniform();  // majority-class mass
        const std::size_t length = 50 + setup.uniform_int(250);
        MemoryBuffer buffer(capacity, true, 5000 + stream);
        Xoshiro256 rng(6000 + stream);
        for (std::size_t i = 0; i < length; ++i) {
            BufferEntry e;
            e.sample_id = i;
            e.features = {0.0};
            e.label = rng.uniform() < skew
                          ? 0
                          : 1 + static_cast<std::uint32_t>(rng.uniform_int(classes - 1));
            balanced_reservoir_insert(buffer, std::move(e));

            if (buffer.size() > capacity) return false;
            std::map<std::uint32_t, std::size_t> counts;
            for (const BufferEntry& entry : buffer.entries) counts[entry.label]++;
            std::size_t max_count = 0, min_count = buffer.size();
            for (const auto& [cls, count] : counts) {
                max_count = std::max(max_count, count);
                min_count = std::min(min_count, count);
            }
            if (!counts.empty() && max_count > min_count + 1) return false;
        }
    }
    return true;
}

// --- shared synthetic stream setup ------------------------------------------

TrainConfig stream_train_config(std::uint64_t seed) {
    TrainConfig config;  // paper-style defaults: lr 0.1, drops at 35/45, 50 epochs
    config.seed = seed;
    return config;
}

LongTailSpec default_spec() {
    return LongTailSpec{};  // 10 classes, 16-d, 100 head + 2x3 tail per class
}

// --- criterion 6: proxy fidelity --------------------------------------------

bool proxy_fidelity() {
    const Dataset dataset = generate_longtail(default_spec());
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const TaskStream stream = split_tasks(dataset, 5, seed);
        TrainConfig train = stream_train_config(seed);
        train.epochs_per_task = 4;
        train.lr_drop_epochs = {2, 3};
        ReplayConfig replay;
        replay.capacity = 50;
        IncrementalOptions options;
        options.hidden_dims = {32};
        options.record_trace = true;
        const IncrementalResult result = train_incremental(stream, train, replay, options);

        for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
            ProxyScoreTable oracle = ProxyScoreTable::create(result.train_splits[t].sample_ids);
            for (const TraceEvent& event : result.traces[t])
                proxy_observe(oracle, event.iteration, event.sample_ids, event.correct);
            if (!(oracle == result.proxy_tables[t])) return false;
        }
    }
    return true;
}

// --- criterion 7: metric formulas -------------------------------------------

bool metric_formulas() {
    {  // the 0.3 forgetting case
        AccuracyMatrix m;
        m.append_checkpoint({0.9});
        m.append_checkpoint({0.6, 0.8});
        if (forgetting_measure(m) != 0.9 - 0.6) return false;
        if (final_avg_accuracy(m) != (0.6 + 0.8) / 2.0) return false;
    }
    {
        AccuracyMatrix m;
        m.append_checkpoint({1.0});
        m.append_checkpoint({1.0, 1.0});
        m.append_checkpoint({1.0, 1.0, 1.0});
        if (forgetting_measure(m) != 0.0) return false;
        if (final_avg_accuracy(m) != 1.0) return false;
    }
    {
        AccuracyMatrix m;
        m.append_checkpoint({0.5});
        if (final_avg_accuracy(m) != 0.5) return false;
    }
    {  // best-ever accuracy can come from a later checkpoint
        AccuracyMatrix m;
        m.append_checkpoint({0.5});
        m.append_checkpoint({0.9, 0.7});
        m.append_checkpoint({0.6, 0.7, 0.8});
        const double expected = ((0.9 - 0.6) + (0.7 - 0.7)) / 2.0;
        if (forgetting_measure(m) != expected) return false;
        if (final_avg_accuracy(m) != (0.6 + 0.7 + 0.8) / 3.0) return false;
    }
    {
        AccuracyMatrix m;
        m.append_checkpoint({0.75});
        m.append_checkpoint({0.25, 1.0});
        m.append_checkpoint({0.25, 0.5, 0.75});
        m.append_checkpoint({0.0, 0.5, 0.25, 1.0});
        const double expected = ((0.75 - 0.0) + (1.0 - 0.5) + (0.75 - 0.25)) / 3.0;
        if (forgetting_measure(m) != expected) return false;
        if (final_avg_accuracy(m) != (0.0 + 0.5 + 0.25 + 1.0) / 4.0) return false;
    }
    return correlate({1, 2, 3}, {1, 3, 2}, CorrelationMethod::kendall) == 1.0 / 3.0;
}

// --- criteria 8/9: directional replay orderings -----------------------------

double mean_acc(const Dataset& dataset, BufferPolicy policy, std::size_t capacity,
                std::size_t seeds) {
    std::vector<double> accs;
    for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
        const TaskStream stream = split_tasks(dataset, 5, seed);
        TrainConfig train = stream_train_config(seed);
        ReplayConfig replay;
        replay.capacity = capacity;
        replay.policy = policy;
        IncrementalOptions options;
        options.hidden_dims = {64, 64};
        accs.push_back(train_incremental(stream, train, replay, options).report.acc);
    }
    return mean_of(accs);
}

bool table_direction() {
    const Dataset dataset = generate_longtail(default_spec());
    const double bottom = mean_acc(dataset, BufferPolicy::bottom_k, 50, 10);
    const double reservoir = mean_acc(dataset, BufferPolicy::reservoir, 50, 10);
    const double top = mean_acc(dataset, BufferPolicy::top_k, 50, 10);
    std::printf("  mean Acc: bottom_k %.4f, reservoir %.4f, top_k %.4f\n", bottom, reservoir, top);
    return bottom >= reservoir && top < bottom;
}

bool buffer_growth_direction() {
    const Dataset dataset = generate_longtail(default_spec());
    const std::vector<std::size_t> sizes = {20, 50, 200, 500};
    std::vector<double> accs;
    for (std::size_t m : sizes) accs.push_back(mean_acc(dataset, BufferPolicy::top_k, m, 10));
    std::printf("  top_k mean Acc by buffer: %.4f (20) %.4f (50) %.4f (200) %.4f (500)\n",
                accs[0], accs[1], accs[2], accs[3]);
    int inversions = 0;
    for (std::size_t i = 1; i < accs.size(); ++i)
        if (accs[i] < accs[i - 1]) ++inversions;
    return inversions <= 1;
}

// --- criterion 10: memorized-subset forgetting ------------------------------

bool memorized_forgetting() {
    const Dataset dataset = generate_longtail(default_spec());
    const std::size_t seeds = 5;
    std::vector<double> mem_drops, test_drops, inf_gaps;

    for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
        const TaskStream stream = split_tasks(dataset, 5, seed);
        const TrainConfig train = stream_train_config(seed);
        IncrementalOptions options;
        options.hidden_dims = {64, 64};

        ReplayConfig replay;
        replay.capacity = 50;
        const IncrementalResult bounded = train_incremental(stream, train, replay, options);

        ReplayConfig infinite;
        infinite.infinite = true;
        const IncrementalResult unbounded = train_incremental(stream, train, infinite, options);

        // offline scores per task on the same train splits both runs used
        MlpTrainerOptions trainer_options;
        trainer_options.hidden_dims = {64, 64};
        trainer_options.train = stream_train_config(seed);
        const auto trainer = make_mlp_trainer(trainer_options);

        std::vector<std::vector<std::uint64_t>> memorized(stream.tasks.size());
        for (std::size_t t = 0; t + 2 < stream.tasks.size(); ++t) {
            const Dataset& split = bounded.train_splits[t];
            const auto plan =
                plan_subsets(split.size(), split.size() / 2, 250, mix_seed(seed, 700 + t));
            const MemScoreTable scores = feldman_estimate(split, trainer, plan);
            memorized[t] = select_memorized(scores, 0.25);
        }

        const MemorizedCurves bounded_curves = memorized_subset_curves(
            bounded.checkpoints, bounded.train_splits, bounded.test_splits, memorized);
        const MemorizedCurves unbounded_curves = memorized_subset_curves(
            unbounded.checkpoints, unbounded.train_splits, unbounded.test_splits, memorized);

        for (std::size_t t = 0; t + 2 < stream.tasks.size(); ++t) {
            if (!bounded_curves.memorized_acc[t][t].has_value()) continue;
            mem_drops.push_back(*bounded_curves.memorized_acc[t][t] -
                                *bounded_curves.memorized_acc[t][t + 2]);
            test_drops.push_back(bounded_curves.test_acc[t][t] -
                                 bounded_curves.test_acc[t][t + 2]);
            const std::size_t last = unbounded_curves.memorized_acc[t].size() - 1;
            inf_gaps.push_back(std::abs(*unbounded_curves.memorized_acc[t][t] -
                                        *unbounded_curves.memorized_acc[t][last]));
        }
    }
    if (mem_drops.empty()) return false;
    const double mem_drop = mean_of(mem_drops);
    const double test_drop = mean_of(test_drops);
    const double inf_gap = mean_of(inf_gaps);
    std::printf("  memorized drop %.4f vs test drop %.4f; infinite-buffer gap %.4f\n", mem_drop,
                test_drop, inf_gap);
    return mem_drop > test_drop && inf_gap <= 0.15;
}

// --- criterion 11: determinism ----------------------------------------------

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

bool determinism() {
    namespace fs = std::filesystem;
    ExperimentConfig config;
    config.kind = "incremental";
    config.tasks = 5;
    config.replay.capacity = 50;
    config.replay.policy = BufferPolicy::bottom_k;
    config.train.epochs_per_task = 10;
    config.train.lr_drop_epochs = {6, 8};
    config.seeds = {3, 4};

    const fs::path out_a = "acceptance_det_a", out_b = "acceptance_det_b";
    bool pass = true;
    for (const auto& out : {out_a, out_b}) {
        fs::remove_all(out);
        config.out_dir = out.string();
        if (run_experiment(config) != 0) pass = false;
    }
    for (const std::string& rel :
         {std::string("seed_3/metrics.json"), std::string("seed_3/accuracy_matrix.csv"),
          std::string("seed_3/buffer.csv"), std::string("seed_4/metrics.json"),
          std::string("aggregate.json")}) {
        const std::string a = slurp(out_a / rel);
        if (a.empty() || a != slurp(out_b / rel)) pass = false;
    }
    fs::remove_all(out_a);
    fs::remove_all(out_b);
    return pass;
}

}  // namespace

int main() {
    run_criterion(1, "gradient oracle", gradient_oracle);
    run_criterion(2, "estimator extremes", estimator_extremes);
    run_criterion(3, "estimator concentration", estimator_concentration);
    run_criterion(4, "reservoir uniformity", reservoir_uniformity);
    run_criterion(5, "balanced buffer invariants", balanced_invariants);
    run_criterion(6, "proxy fidelity", proxy_fidelity);
    run_criterion(7, "metric formulas", metric_formulas);
    run_criterion(8, "replay policy ordering", table_direction);
    run_criterion(9, "top-k vs buffer size", buffer_growth_direction);
    run_criterion(10, "memorized-subset forgetting", memorized_forgetting);
    run_criterion(11, "determinism", determinism);

    std::printf("%s\n", failures == 0 ? "all criteria passed" : "FAILURES PRESENT");
    return failures == 0 ? 0 : 1;
}
