#include "memrehearse/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "memrehearse/errors.hpp"
#include "memrehearse/trainer.hpp"

namespace memrehearse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed,
                         const std::string& path) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown key '" + (path.empty() ? key : path + "." + key) + "'");
    }
}

void parse_trainer(const json& obj, ExperimentConfig& config) {
    reject_unknown_keys(obj,
                        {"learning_rate", "momentum", "weight_decay", "epochs_per_task",
                         "batch_size", "lr_drop_epochs", "lr_drop_factor", "hidden_dims"},
                        "trainer");
    if (obj.contains("learning_rate")) config.train.learning_rate = obj["learning_rate"];
    if (obj.contains("momentum")) config.train.momentum = obj["momentum"];
    if (obj.contains("weight_decay")) config.train.weight_decay = obj["weight_decay"];
    if (obj.contains("epochs_per_task")) config.train.epochs_per_task = obj["epochs_per_task"];
    if (obj.contains("batch_size")) config.train.batch_size = obj["batch_size"];
    if (obj.contains("lr_drop_epochs"))
        config.train.lr_drop_epochs = obj["lr_drop_epochs"].get<std::vector<int>>();
    if (obj.contains("lr_drop_factor")) config.train.lr_drop_factor = obj["lr_drop_factor"];
    if (obj.contains("hidden_dims"))
        config.hidden_dims = obj["hidden_dims"].get<std::vector<std::size_t>>();
}

void parse_buffer(const json& obj, ExperimentConfig& config) {
    reject_unknown_keys(obj,
                        {"capacity", "infinite", "policy", "top_fraction", "mixed_base",
                         "per_epoch_replace", "test_fraction"},
                        "buffer");
    if (obj.contains("capacity")) config.replay.capacity = obj["capacity"];
    if (obj.contains("infinite")) config.replay.infinite = obj["infinite"];
    if (obj.contains("policy")) config.replay.policy = parse_policy(obj["policy"]);
    if (obj.contains("top_fraction")) config.replay.top_fraction = obj["top_fraction"];
    if (obj.contains("mixed_base")) {
        const std::string base = obj["mixed_base"];
        if (base == "bottomk")
            config.replay.mixed_base = SelectorMode::Kind::bottom_k;
        else if (base == "midk")
            config.replay.mixed_base = SelectorMode::Kind::middle_k;
        else
            throw ConfigError("buffer.mixed_base must be 'bottomk' or 'midk'");
    }
    if (obj.contains("per_epoch_replace")) config.replay.per_epoch_replace = obj["per_epoch_replace"];
    if (obj.contains("test_fraction")) config.replay.test_fraction = obj["test_fraction"];
}

void parse_longtail(const json& obj, LongTailSpec& spec) {
    reject_unknown_keys(obj,
                        {"class_count", "head_samples_per_class", "tail_clusters_per_class",
                         "tail_samples_per_cluster", "feature_dim", "head_spread", "tail_offset",
                         "noise", "seed"},
                        "dataset.longtail");
    if (obj.contains("class_count")) spec.class_count = obj["class_count"];
    if (obj.contains("head_samples_per_class")) spec.head_samples_per_class = obj["head_samples_per_class"];
    if (obj.contains("tail_clusters_per_class")) spec.tail_clusters_per_class = obj["tail_clusters_per_class"];
    if (obj.contains("tail_samples_per_cluster")) spec.tail_samples_per_cluster = obj["tail_samples_per_cluster"];
    if (obj.contains("feature_dim")) spec.feature_dim = obj["feature_dim"];
    if (obj.contains("head_spread")) spec.head_spread = obj["head_spread"];
    if (obj.contains("tail_offset")) spec.tail_offset = obj["tail_offset"];
    if (obj.contains("noise")) spec.noise = obj["noise"];
    if (obj.contains("seed")) spec.seed = obj["seed"];
}

}  // namespace

void ExperimentConfig::validate() const {
    static const std::vector<std::string> kinds = {"incremental",     "memscore",
                                                   "sweep_classes",   "sweep_fractions",
                                                   "proxy_correlate", "probe"};
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
        throw ConfigError("unknown experiment kind '" + kind + "'");
    if (seeds.empty()) throw ConfigError("at least one seed required");
    if (tasks == 0) throw ConfigError("tasks must be >= 1");
    if (threshold < -1.0 || threshold > 1.0) throw ConfigError("threshold must be in [-1,1]");
    if (!(estimator.k_fraction > 0.0 && estimator.k_fraction < 1.0))
        throw ConfigError("estimator.k_fraction must be in (0,1)");
    if (estimator.u == 0) throw ConfigError("estimator.u must be >= 1");
    train.validate();
    replay.validate();
    if (dataset_path.empty()) longtail.validate();
}

ExperimentConfig parse_config_json(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
    }

    ExperimentConfig config;
    reject_unknown_keys(root,
                        {"kind", "dataset", "stream", "trainer", "buffer", "estimator",
                         "threshold", "sweep", "probe", "seeds", "out"},
                        "");
    if (root.contains("kind")) config.kind = root["kind"];
    if (root.contains("dataset")) {
        const json& ds = root["dataset"];
        reject_unknown_keys(ds, {"path", "longtail"}, "dataset");
        if (ds.contains("path")) config.dataset_path = ds["path"];
        if (ds.contains("longtail")) parse_longtail(ds["longtail"], config.longtail);
    }
    if (root.contains("stream")) {
        reject_unknown_keys(root["stream"], {"tasks"}, "stream");
        if (root["stream"].contains("tasks")) config.tasks = root["stream"]["tasks"];
    }
    if (root.contains("trainer")) parse_trainer(root["trainer"], config);
    if (root.contains("buffer")) parse_buffer(root["buffer"], config);
    if (root.contains("estimator")) {
        reject_unknown_keys(root["estimator"], {"k_fraction", "u"}, "estimator");
        if (root["estimator"].contains("k_fraction"))
            config.estimator.k_fraction = root["estimator"]["k_fraction"];
        if (root["estimator"].contains("u")) config.estimator.u = root["estimator"]["u"];
    }
    if (root.contains("threshold")) config.threshold = root["threshold"];
    if (root.contains("sweep")) {
        reject_unknown_keys(root["sweep"], {"class_counts", "fractions"}, "sweep");
        if (root["sweep"].contains("class_counts"))
            config.class_counts = root["sweep"]["class_counts"].get<std::vector<std::uint32_t>>();
        if (root["sweep"].contains("fractions"))
            config.fractions = root["sweep"]["fractions"].get<std::vector<double>>();
    }
    if (root.contains("probe")) {
        reject_unknown_keys(root["probe"], {"task"}, "probe");
        if (root["probe"].contains("task")) config.probe_task = root["probe"]["task"];
    }
    if (root.contains("seeds")) config.seeds = root["seeds"].get<std::vector<std::uint64_t>>();
    if (root.contains("out")) config.out_dir = root["out"];
    return config;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_json(buffer.str());
}

std::string config_to_json(const ExperimentConfig& config) {
    json root;
    root["kind"] = config.kind;
    if (!config.dataset_path.empty()) {
        root["dataset"]["path"] = config.dataset_path;
    } else {
        json lt;
        lt["class_count"] = config.longtail.class_count;
        lt["head_samples_per_class"] = config.longtail.head_samples_per_class;
        lt["tail_clusters_per_class"] = config.longtail.tail_clusters_per_class;
        lt["tail_samples_per_cluster"] = config.longtail.tail_samples_per_cluster;
        lt["feature_dim"] = config.longtail.feature_dim;
        lt["head_spread"] = config.longtail.head_spread;
        lt["tail_offset"] = config.longtail.tail_offset;
        lt["noise"] = config.longtail.noise;
        lt["seed"] = config.longtail.seed;
        root["dataset"]["longtail"] = lt;
    }
    root["stream"]["tasks"] = config.tasks;
    json tr;
    tr["learning_rate"] = config.train.learning_rate;
    tr["momentum"] = config.train.momentum;
    tr["weight_decay"] = config.train.weight_decay;
    tr["epochs_per_task"] = config.train.epochs_per_task;
    tr["batch_size"] = config.train.batch_size;
    tr["lr_drop_epochs"] = config.train.lr_drop_epochs;
    tr["lr_drop_factor"] = config.train.lr_drop_factor;
    tr["hidden_dims"] = config.hidden_dims;
    root["trainer"] = tr;
    json buf;
    buf["capacity"] = config.replay.capacity;
    buf["infinite"] = config.replay.infinite;
    buf["policy"] = policy_name(config.replay.policy);
    buf["top_fraction"] = config.replay.top_fraction;
    buf["mixed_base"] =
        config.replay.mixed_base == SelectorMode::Kind::middle_k ? "midk" : "bottomk";
    buf["per_epoch_replace"] = config.replay.per_epoch_replace;
    buf["test_fraction"] = config.replay.test_fraction;
    root["buffer"] = buf;
    root["estimator"]["k_fraction"] = config.estimator.k_fraction;
    root["estimator"]["u"] = config.estimator.u;
    root["threshold"] = config.threshold;
    root["sweep"]["class_counts"] = config.class_counts;
    root["sweep"]["fractions"] = config.fractions;
    root["probe"]["task"] = config.probe_task;
    root["seeds"] = config.seeds;
    root["out"] = config.out_dir;
    return root.dump(2);
}

Dataset build_dataset(const ExperimentConfig& config) {
    if (!config.dataset_path.empty()) return load_dataset(config.dataset_path);
    return generate_longtail(config.longtail);
}

Aggregate aggregate_values(const std::vector<double>& values) {
    Aggregate agg;
    const double n = static_cast<double>(values.size());
    agg.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - agg.mean) * (v - agg.mean);
        agg.std_dev = std::sqrt(ss / (n - 1.0));
    }
    return agg;
}

namespace {

json aggregate_json(const std::vector<double>& values) {
    const Aggregate agg = aggregate_values(values);
    return json{{"mean", agg.mean}, {"std", agg.std_dev}};
}

json matrix_json(const AccuracyMatrix& matrix) {
    json rows = json::array();
    for (const auto& row : matrix.rows) rows.push_back(row);
    return rows;
}

json histogram_json(const Histogram& hist) {
    return json{{"edges", hist.edges}, {"counts", hist.counts}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << text;
}

struct SeedOutcome {
    json metrics;  // per-seed metrics payload
};

SeedOutcome run_incremental_seed(const ExperimentConfig& config, const Dataset& dataset,
                                 std::uint64_t seed, const fs::path& seed_dir) {
    TaskStream stream = split_tasks(dataset, config.tasks, seed);
    TrainConfig train = config.train;
    train.seed = seed;
    IncrementalOptions options;
    options.hidden_dims = config.hidden_dims;
    IncrementalResult result = train_incremental(stream, train, config.replay, options);

    save_accuracy_matrix_csv(result.report.matrix, (seed_dir / "accuracy_matrix.csv").string());
    for (std::size_t t = 0; t < result.proxy_tables.size(); ++t)
        save_proxy_csv(result.proxy_tables[t],
                       (seed_dir / ("proxy_task" + std::to_string(t) + ".csv")).string());
    save_buffer_csv(result.final_buffer, (seed_dir / "buffer.csv").string());

    SeedOutcome outcome;
    outcome.metrics["acc"] = result.report.acc;
    outcome.metrics["fm"] = result.report.fm;
    outcome.metrics["matrix"] = matrix_json(result.report.matrix);
    return outcome;
}

SeedOutcome run_memscore_seed(const ExperimentConfig& config, const Dataset& dataset,
                              std::uint64_t seed, const fs::path& seed_dir) {
    MlpTrainerOptions trainer_options;
    trainer_options.hidden_dims = config.hidden_dims;
    trainer_options.train = config.train;
    const auto trainer = make_mlp_trainer(trainer_options);

    const std::size_t n = dataset.size();
    auto k = static_cast<std::size_t>(std::floor(config.estimator.k_fraction * double(n)));
    k = std::min(std::max<std::size_t>(k, 1), n - 1);
    const auto plan = plan_subsets(n, k, config.estimator.u, seed);
    const MemScoreTable table = feldman_estimate(dataset, trainer, plan);
    save_memscore_csv(table, (seed_dir / "memscores.csv").string());

    std::vector<double> scores = table.scores;
    const auto memorized = select_memorized(table, config.threshold);
    SeedOutcome outcome;
    outcome.metrics["mean_score"] =
        std::accumulate(scores.begin(), scores.end(), 0.0) / double(scores.size());
    outcome.metrics["memorized_count"] = memorized.size();
    outcome.metrics["histogram"] = histogram_json(memscore_histogram(scores, 20));
    return outcome;
}

SeedOutcome run_sweep_seed(const ExperimentConfig& config, const Dataset& dataset,
                           std::uint64_t seed, const fs::path& seed_dir) {
    MlpTrainerOptions trainer_options;
    trainer_options.hidden_dims = config.hidden_dims;
    trainer_options.train = config.train;
    const auto trainer = make_mlp_trainer(trainer_options);

    EstimatorConfig estimator = config.estimator;
    estimator.seed = seed;
    const SweepReport report = config.kind == "sweep_classes"
                                   ? sweep_class_counts(dataset, config.class_counts, estimator, trainer)
                                   : sweep_fractions(dataset, config.fractions, estimator, trainer);

    json entries = json::array();
    for (const SweepEntry& entry : report.entries) {
        entries.push_back({{"parameter", entry.parameter},
                           {"probe_samples", entry.probe_samples},
                           {"mean_score", entry.mean_score},
                           {"fraction_above_025", entry.fraction_above_025},
                           {"fraction_above_01", entry.fraction_above_01},
                           {"histogram", histogram_json(entry.histogram)}});
    }
    json report_json = {{"kind", report.kind},
                        {"k_fraction", report.estimator.k_fraction},
                        {"u", report.estimator.u},
                        {"entries", entries}};
    write_text(seed_dir / "sweep.json", report_json.dump(2));

    SeedOutcome outcome;
    outcome.metrics["entries"] = entries;
    return outcome;
}

SeedOutcome run_correlate_seed(const ExperimentConfig& config, const Dataset& dataset,
                               std::uint64_t seed, const fs::path& seed_dir) {
    // training-iteration proxy from a single-task run over the same data
    TaskStream stream;
    stream.tasks.push_back(dataset);
    stream.classes_per_task = dataset.class_count;
    for (std::uint32_t c = 0; c < dataset.class_count; ++c) stream.class_order.push_back(c);

    TrainConfig train = config.train;
    train.seed = seed;
    ReplayConfig replay;
    replay.policy = BufferPolicy::reservoir;
    replay.capacity = 1;
    replay.test_fraction = config.replay.test_fraction;
    IncrementalOptions options;
    options.hidden_dims = config.hidden_dims;
    const IncrementalResult result = train_incremental(stream, train, replay, options);
    const Dataset& scored = result.train_splits[0];
    const ProxyScoreTable& proxy = result.proxy_tables[0];

    MlpTrainerOptions trainer_options;
    trainer_options.hidden_dims = config.hidden_dims;
    trainer_options.train = config.train;
    const auto trainer = make_mlp_trainer(trainer_options);
    const std::size_t n = scored.size();
    auto k = static_cast<std::size_t>(std::floor(config.estimator.k_fraction * double(n)));
    k = std::min(std::max<std::size_t>(k, 1), n - 1);
    const auto plan = plan_subsets(n, k, config.estimator.u, seed);
    const MemScoreTable table = feldman_estimate(scored, trainer, plan);

    // never-learned samples enter at the total-iteration upper bound
    std::vector<double> proxy_values, feldman_values;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        const std::int64_t v = proxy.v[proxy.index.at(scored.sample_ids[i])];
        proxy_values.push_back(
            static_cast<double>(v == kNeverLearned ? proxy.total_iterations : v));
        feldman_values.push_back(table.scores[i]);
    }
    save_proxy_csv(proxy, (seed_dir / "proxy.csv").string());
    save_memscore_csv(table, (seed_dir / "memscores.csv").string());

    SeedOutcome outcome;
    outcome.metrics["pearson"] = correlate(proxy_values, feldman_values, CorrelationMethod::pearson);
    outcome.metrics["spearman"] =
        correlate(proxy_values, feldman_values, CorrelationMethod::spearman);
    outcome.metrics["kendall"] = correlate(proxy_values, feldman_values, CorrelationMethod::kendall);
    return outcome;
}

SeedOutcome run_probe_seed(const ExperimentConfig& config, const Dataset& dataset,
                           std::uint64_t seed, const fs::path& seed_dir) {
    TaskStream stream = split_tasks(dataset, config.tasks, seed);
    TrainConfig train = config.train;
    train.seed = seed;
    IncrementalOptions options;
    options.hidden_dims = config.hidden_dims;
    const IncrementalResult result = train_incremental(stream, train, config.replay, options);

    const std::uint32_t probe_task =
        config.probe_task != 0 ? config.probe_task - 1 : static_cast<std::uint32_t>(config.tasks / 2);
    if (probe_task >= stream.tasks.size()) throw ConfigError("probe task out of range");
    const Dataset& probe_data = result.train_splits[probe_task];

    json accuracies = json::array();
    for (const ModelParams& checkpoint : result.checkpoints) {
        const Matrix features = forward(checkpoint, probe_data.features).features;
        ProbeConfig probe_config;
        probe_config.seed = seed;
        const ProbeResult probe = train_linear_probe(features, probe_data.labels, probe_config);
        accuracies.push_back(probe.accuracy);
    }
    json payload = {{"probe_task", probe_task}, {"accuracy_per_checkpoint", accuracies}};
    write_text(seed_dir / "probe.json", payload.dump(2));

    SeedOutcome outcome;
    outcome.metrics = payload;
    return outcome;
}

json run_all_seeds(const ExperimentConfig& config, const Dataset& dataset, const fs::path& out) {
    json per_seed = json::object();
    for (std::uint64_t seed : config.seeds) {
        const fs::path seed_dir = out / ("seed_" + std::to_string(seed));
        fs::create_directories(seed_dir);
        SeedOutcome outcome;
        if (config.kind == "incremental")
            outcome = run_incremental_seed(config, dataset, seed, seed_dir);
        else if (config.kind == "memscore")
            outcome = run_memscore_seed(config, dataset, seed, seed_dir);
        else if (config.kind == "sweep_classes" || config.kind == "sweep_fractions")
            outcome = run_sweep_seed(config, dataset, seed, seed_dir);
        else if (config.kind == "proxy_correlate")
            outcome = run_correlate_seed(config, dataset, seed, seed_dir);
        else if (config.kind == "probe")
            outcome = run_probe_seed(config, dataset, seed, seed_dir);
        else
            throw ConfigError("unknown experiment kind '" + config.kind + "'");
        write_text(seed_dir / "metrics.json", outcome.metrics.dump(2));
        per_seed[std::to_string(seed)] = outcome.metrics;
    }
    return per_seed;
}

json build_aggregate(const ExperimentConfig& config, const json& per_seed) {
    json agg;
    auto collect = [&](const std::string& key) {
        std::vector<double> values;
        for (const auto& [seed, metrics] : per_seed.items())
            if (metrics.contains(key) && metrics[key].is_number())
                values.push_back(metrics[key].get<double>());
        return values;
    };
    for (const std::string& key :
         {std::string("acc"), std::string("fm"), std::string("mean_score"),
          std::string("pearson"), std::string("spearman"), std::string("kendall")}) {
        const auto values = collect(key);
        if (!values.empty()) agg[key] = aggregate_json(values);
    }
    agg["seeds"] = config.seeds;
    return agg;
}

}  // namespace

int run_experiment(const ExperimentConfig& config) {
    const fs::path out(config.out_dir);
    fs::create_directories(out);
    json manifest;
    manifest["config"] = json::parse(config_to_json(config));
    const auto start = std::chrono::steady_clock::now();
    try {
        config.validate();
        const Dataset dataset = build_dataset(config);
        const json per_seed = run_all_seeds(config, dataset, out);
        write_text(out / "aggregate.json", build_aggregate(config, per_seed).dump(2));
        manifest["status"] = "ok";
    } catch (const std::exception& e) {
        manifest["status"] = "error";
        manifest["error"] = e.what();
        std::cerr << "error: " << e.what() << "\n";
    }
    const auto stop = std::chrono::steady_clock::now();
    manifest["wall_time_seconds"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(stop - start).count() / 1000.0;
    write_text(out / "manifest.json", manifest.dump(2));
    return manifest["status"] == "ok" ? 0 : 1;
}

int compare_policies(const std::vector<ExperimentConfig>& configs) {
    if (configs.empty()) throw ConfigError("compare needs at least one config");
    const ExperimentConfig& first = configs.front();
    for (const ExperimentConfig& config : configs) {
        if (config.kind != "incremental")
            throw ConfigError("compare requires incremental configs");
        if (config.dataset_path != first.dataset_path ||
            !(config.longtail.seed == first.longtail.seed &&
              config.longtail.class_count == first.longtail.class_count &&
              config.longtail.feature_dim == first.longtail.feature_dim) ||
            config.tasks != first.tasks)
            throw ConfigError("compare configs must share dataset and stream settings");
    }

    const fs::path out(first.out_dir);
    fs::create_directories(out);
    const Dataset dataset = build_dataset(first);

    json table = json::array();
    std::ofstream csv(out / "comparison.csv");
    csv.precision(17);
    csv << "policy,buffer,acc_mean,acc_std,fm_mean,fm_std\n";
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const ExperimentConfig& config = configs[i];
        config.validate();
        std::vector<double> accs, fms;
        for (std::uint64_t seed : config.seeds) {
            const fs::path seed_dir =
                out / ("policy_" + std::to_string(i) + "_seed_" + std::to_string(seed));
            fs::create_directories(seed_dir);
            const SeedOutcome outcome = run_incremental_seed(config, dataset, seed, seed_dir);
            accs.push_back(outcome.metrics["acc"].get<double>());
            fms.push_back(outcome.metrics["fm"].get<double>());
        }
        const Aggregate acc = aggregate_values(accs);
        const Aggregate fm = aggregate_values(fms);
        const std::string buffer_label =
            config.replay.infinite ? "inf" : std::to_string(config.replay.capacity);
        csv << policy_name(config.replay.policy) << ',' << buffer_label << ',' << acc.mean << ','
            << acc.std_dev << ',' << fm.mean << ',' << fm.std_dev << "\n";
        table.push_back({{"policy", policy_name(config.replay.policy)},
                         {"buffer", buffer_label},
                         {"acc", {{"mean", acc.mean}, {"std", acc.std_dev}}},
                         {"fm", {{"mean", fm.mean}, {"std", fm.std_dev}}},
                         {"upper_bound", config.replay.infinite}});
    }
    write_text(out / "comparison.json", table.dump(2));
    return 0;
}

}  // namespace memrehearse
