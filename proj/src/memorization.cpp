#include "memrehearse/memorization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "memrehearse/errors.hpp"
#include "memrehearse/rng.hpp"
#include "memrehearse/trainer.hpp"

namespace memrehearse {

std::vector<std::uint32_t> SubsetPlan::subset_indices(std::size_t row) const {
    std::vector<std::uint32_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < n; ++i)
        if (membership[row][i]) out.push_back(static_cast<std::uint32_t>(i));
    return out;
}

double MemScoreTable::score_for(std::uint64_t sample_id) const {
    for (std::size_t i = 0; i < sample_ids.size(); ++i)
        if (sample_ids[i] == sample_id) return scores[i];
    throw InputError("unknown sample_id " + std::to_string(sample_id));
}

SubsetPlan plan_subsets(std::size_t n, std::size_t k, std::size_t u, std::uint64_t seed) {
    if (k == 0 || k >= n) throw ConfigError("k must satisfy 0 < k < n");
    if (u == 0) throw ConfigError("u must be >= 1");

    SubsetPlan plan;
    plan.n = n;
    plan.k = k;
    plan.u = u;
    plan.seed = seed;

    Xoshiro256 rng(seed);
    std::vector<std::size_t> indices(n);
    const int max_attempts = 1000;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        plan.membership.assign(u, std::vector<std::uint8_t>(n, 0));
        for (std::size_t row = 0; row < u; ++row) {
            std::iota(indices.begin(), indices.end(), 0);
            // partial Fisher-Yates: the first k entries form the subset
            for (std::size_t i = 0; i < k; ++i) {
                const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(n - i));
                std::swap(indices[i], indices[j]);
            }
            for (std::size_t i = 0; i < k; ++i) plan.membership[row][indices[i]] = 1;
        }
        if (u < 20) return plan;  // coverage rule only enforced for u >= 20
        bool covered = true;
        for (std::size_t i = 0; i < n && covered; ++i) {
            std::size_t included = 0;
            for (std::size_t row = 0; row < u; ++row) included += plan.membership[row][i];
            covered = included > 0 && included < u;
        }
        if (covered) return plan;
    }
    throw RunError("plan_subsets: coverage redraw limit reached");
}

MemScoreTable feldman_estimate(const Dataset& dataset, const SubsetTrainer& trainer,
                               const SubsetPlan& plan) {
    if (plan.n != dataset.size()) throw InputError("plan size does not match dataset size");

    const std::size_t n = plan.n;
    std::vector<std::vector<double>> correctness(plan.u);
    std::vector<std::string> failures(plan.u);

#pragma omp parallel for schedule(dynamic)
    for (std::int64_t row = 0; row < static_cast<std::int64_t>(plan.u); ++row) {
        try {
            const auto train_rows = plan.subset_indices(static_cast<std::size_t>(row));
            const std::uint64_t subset_seed = mix_seed(plan.seed, static_cast<std::uint64_t>(row));
            auto result = trainer(dataset, train_rows, subset_seed);
            if (result.size() != n) throw RunError("trainer returned wrong length");
            correctness[static_cast<std::size_t>(row)] = std::move(result);
        } catch (const std::exception& e) {
            failures[static_cast<std::size_t>(row)] = e.what();
        }
    }
    for (std::size_t row = 0; row < plan.u; ++row)
        if (!failures[row].empty())
            throw RunError("trainer failed on subset " + std::to_string(row) + ": " + failures[row]);

    MemScoreTable table;
    table.sample_ids = dataset.sample_ids;
    table.scores.resize(n);
    table.include_count.resize(n);
    table.exclude_count.resize(n);
    table.k_over_n = static_cast<double>(plan.k) / static_cast<double>(n);
    table.u = static_cast<std::uint32_t>(plan.u);

    for (std::size_t i = 0; i < n; ++i) {
        double in_sum = 0.0, out_sum = 0.0;
        std::size_t in_count = 0, out_count = 0;
        for (std::size_t row = 0; row < plan.u; ++row) {
            if (plan.membership[row][i]) {
                in_sum += correctness[row][i];
                ++in_count;
            } else {
                out_sum += correctness[row][i];
                ++out_count;
            }
        }
        if (in_count == 0 || out_count == 0)
            throw RunError("sample " + std::to_string(i) + " has an empty include or exclude group");
        table.scores[i] = in_sum / static_cast<double>(in_count) -
                          out_sum / static_cast<double>(out_count);
        table.include_count[i] = static_cast<std::uint32_t>(in_count);
        table.exclude_count[i] = static_cast<std::uint32_t>(out_count);
    }
    return table;
}

SubsetTrainer make_mlp_trainer(const MlpTrainerOptions& options) {
    return [options](const Dataset& data, const std::vector<std::uint32_t>& train_rows,
                     std::uint64_t seed) {
        std::vector<std::size_t> rows(train_rows.begin(), train_rows.end());
        const Dataset train_set = data.take(rows);
        const ModelParams params = train_stationary(train_set, options.hidden_dims, options.train, seed);

        std::vector<double> result(data.size());
        if (options.softmax_probability) {
            const Matrix logits = forward(params, data.features).logits;
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double* row = logits.row_ptr(i);
                double maxv = row[0];
                for (std::size_t j = 1; j < logits.cols; ++j) maxv = std::max(maxv, row[j]);
                double sum = 0.0;
                for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(row[j] - maxv);
                result[i] = std::exp(row[data.labels[i]] - maxv) / sum;
            }
        } else {
            const auto preds = predict(params, data.features);
            for (std::size_t i = 0; i < data.size(); ++i)
                result[i] = preds[i] == data.labels[i] ? 1.0 : 0.0;
        }
        return result;
    };
}

ProxyScoreTable ProxyScoreTable::create(const std::vector<std::uint64_t>& sample_ids) {
    ProxyScoreTable table;
    table.sample_ids = sample_ids;
    table.v.assign(sample_ids.size(), kNeverLearned);
    for (std::size_t i = 0; i < sample_ids.size(); ++i) table.index[sample_ids[i]] = i;
    return table;
}

void proxy_observe(ProxyScoreTable& table, std::int64_t iteration,
                   const std::vector<std::uint64_t>& sample_ids,
                   const std::vector<std::uint8_t>& correct) {
    if (sample_ids.size() != correct.size())
        throw InputError("proxy_observe: list lengths differ");
    if (iteration < table.last_iteration)
        throw InputError("proxy_observe: iteration must be nondecreasing");
    for (std::size_t i = 0; i < sample_ids.size(); ++i) {
        const auto it = table.index.find(sample_ids[i]);
        if (it == table.index.end())
            throw InputError("proxy_observe: unknown sample_id " + std::to_string(sample_ids[i]));
        std::int64_t& v = table.v[it->second];
        if (correct[i] && v == kNeverLearned)
            v = iteration;
        else if (!correct[i] && v != kNeverLearned)
            v = kNeverLearned;
    }
    table.last_iteration = iteration;
    table.total_iterations = std::max(table.total_iterations, iteration + 1);
}

namespace {

// In-place Cholesky of an SPD matrix; throws NumericError when it breaks down.
void cholesky(Matrix& a) {
    const std::size_t n = a.rows;
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a.at(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= a.at(j, k) * a.at(j, k);
        if (diag <= 0.0) throw NumericError("covariance not positive definite");
        a.at(j, j) = std::sqrt(diag);
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) v -= a.at(i, k) * a.at(j, k);
            a.at(i, j) = v / a.at(j, j);
        }
    }
}

// Solves L L^T x = b given the Cholesky factor in the lower triangle.
std::vector<double> cholesky_solve(const Matrix& l, std::vector<double> b) {
    const std::size_t n = l.rows;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) b[i] -= l.at(i, k) * b[k];
        b[i] /= l.at(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) b[i] -= l.at(k, i) * b[k];
        b[i] /= l.at(i, i);
    }
    return b;
}

}  // namespace

double mahalanobis_distance(const std::vector<double>& point, const std::vector<double>& mean,
                            const Matrix& covariance) {
    const std::size_t d = point.size();
    if (mean.size() != d || covariance.rows != d || covariance.cols != d)
        throw ShapeError("mahalanobis_distance: dimension mismatch");
    Matrix cov = covariance;
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += cov.at(i, i);
    const double eps = 1e-6 * trace / static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) cov.at(i, i) += eps;
    cholesky(cov);

    std::vector<double> diff(d);
    for (std::size_t i = 0; i < d; ++i) diff[i] = point[i] - mean[i];
    const std::vector<double> solved = cholesky_solve(cov, diff);
    double q = 0.0;
    for (std::size_t i = 0; i < d; ++i) q += diff[i] * solved[i];
    return std::sqrt(std::max(q, 0.0));
}

std::vector<double> mahalanobis_proxy(const Matrix& features,
                                      const std::vector<std::uint32_t>& labels) {
    if (features.rows != labels.size()) throw ShapeError("mahalanobis_proxy: row/label mismatch");
    const std::size_t d = features.cols;
    std::uint32_t classes = 0;
    for (std::uint32_t y : labels) classes = std::max(classes, y + 1);

    std::vector<double> out(features.rows, 0.0);
    for (std::uint32_t c = 0; c < classes; ++c) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) rows.push_back(i);
        if (rows.empty()) continue;

        std::vector<double> mean(d, 0.0);
        for (std::size_t r : rows)
            for (std::size_t j = 0; j < d; ++j) mean[j] += features.at(r, j);
        for (double& m : mean) m /= static_cast<double>(rows.size());

        Matrix cov(d, d);  // population covariance
        for (std::size_t r : rows)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    cov.at(i, j) += (features.at(r, i) - mean[i]) * (features.at(r, j) - mean[j]);
        for (double& x : cov.data) x /= static_cast<double>(rows.size());

        for (std::size_t r : rows) {
            std::vector<double> point(features.row_ptr(r), features.row_ptr(r) + d);
            out[r] = mahalanobis_distance(point, mean, cov);
        }
    }
    return out;
}

std::vector<std::uint64_t> select_memorized(const MemScoreTable& table, double threshold) {
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < table.scores.size(); ++i)
        if (table.scores[i] > threshold) ids.push_back(table.sample_ids[i]);
    return ids;
}

Histogram memscore_histogram(const std::vector<double>& scores, std::size_t bin_count) {
    if (bin_count == 0) throw ConfigError("bin_count must be >= 1");
    Histogram hist;
    hist.edges.resize(bin_count + 1);
    for (std::size_t i = 0; i <= bin_count; ++i)
        hist.edges[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(bin_count);
    hist.counts.assign(bin_count, 0);
    for (double s : scores) {
        double pos = (s + 1.0) / 2.0 * static_cast<double>(bin_count);
        std::size_t idx = static_cast<std::size_t>(std::max(0.0, std::floor(pos)));
        if (idx >= bin_count) idx = bin_count - 1;  // right-closed final bin
        ++hist.counts[idx];
    }
    return hist;
}

namespace {

SweepEntry summarize(double parameter, const std::vector<double>& scores) {
    SweepEntry entry;
    entry.parameter = parameter;
    entry.probe_samples = scores.size();
    double sum = 0.0;
    std::size_t above025 = 0, above01 = 0;
    for (double s : scores) {
        sum += s;
        if (s > 0.25) ++above025;
        if (s > 0.1) ++above01;
    }
    const double n = scores.empty() ? 1.0 : static_cast<double>(scores.size());
    entry.mean_score = sum / n;
    entry.fraction_above_025 = static_cast<double>(above025) / n;
    entry.fraction_above_01 = static_cast<double>(above01) / n;
    entry.histogram = memscore_histogram(scores, 10);
    return entry;
}

std::size_t plan_k(double k_fraction, std::size_t n) {
    auto k = static_cast<std::size_t>(std::floor(k_fraction * static_cast<double>(n)));
    k = std::max<std::size_t>(k, 1);
    return std::min(k, n - 1);
}

}  // namespace

SweepReport sweep_class_counts(const Dataset& dataset, const std::vector<std::uint32_t>& class_counts,
                               const EstimatorConfig& config, const SubsetTrainer& trainer) {
    if (class_counts.empty()) throw ConfigError("class_counts must be non-empty");
    const std::uint32_t probe_classes = *std::min_element(class_counts.begin(), class_counts.end());

    SweepReport report;
    report.kind = "classes";
    report.estimator = config;
    for (std::uint32_t count : class_counts) {
        if (count == 0 || count > dataset.class_count)
            throw ConfigError("class count " + std::to_string(count) + " not achievable");
        std::unordered_set<std::uint32_t> keep;
        for (std::uint32_t c = 0; c < count; ++c) keep.insert(c);
        const Dataset subset = subset_classes(dataset, keep);

        const auto plan = plan_subsets(subset.size(), plan_k(config.k_fraction, subset.size()),
                                       config.u, mix_seed(config.seed, count));
        const MemScoreTable table = feldman_estimate(subset, trainer, plan);

        std::vector<double> probe_scores;
        for (std::size_t i = 0; i < subset.size(); ++i)
            if (subset.labels[i] < probe_classes) probe_scores.push_back(table.scores[i]);
        report.entries.push_back(summarize(count, probe_scores));
    }
    return report;
}

SweepReport sweep_fractions(const Dataset& dataset, const std::vector<double>& fractions,
                            const EstimatorConfig& config, const SubsetTrainer& trainer) {
    if (fractions.empty()) throw ConfigError("fractions must be non-empty");

    SweepReport report;
    report.kind = "fractions";
    report.estimator = config;
    for (std::size_t idx = 0; idx < fractions.size(); ++idx) {
        const double fraction = fractions[idx];
        const Dataset subset = subsample(dataset, fraction, mix_seed(config.seed, 1000 + idx));
        const auto plan = plan_subsets(subset.size(), plan_k(config.k_fraction, subset.size()),
                                       config.u, mix_seed(config.seed, 2000 + idx));
        const MemScoreTable table = feldman_estimate(subset, trainer, plan);
        report.entries.push_back(summarize(fraction, table.scores));
    }
    return report;
}

void save_memscore_csv(const MemScoreTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.precision(17);
    out << "sample_id,score,include_count,exclude_count\n";
    for (std::size_t i = 0; i < table.sample_ids.size(); ++i)
        out << table.sample_ids[i] << ',' << table.scores[i] << ',' << table.include_count[i] << ','
            << table.exclude_count[i] << "\n";
}

void save_proxy_csv(const ProxyScoreTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out << "sample_id,v,is_infinite\n";
    for (std::size_t i = 0; i < table.sample_ids.size(); ++i) {
        const bool inf = table.v[i] == kNeverLearned;
        // the never-learned sentinel serializes as total_iterations
        out << table.sample_ids[i] << ',' << (inf ? table.total_iterations : table.v[i]) << ','
            << (inf ? 1 : 0) << "\n";
    }
}

}  // namespace memrehearse
