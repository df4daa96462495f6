#include "memrehearse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_set>

#include "memrehearse/errors.hpp"
#include "memrehearse/kernels.hpp"
#include "memrehearse/rng.hpp"

namespace memrehearse {

double AccuracyMatrix::at(std::size_t checkpoint, std::size_t task) const {
    if (checkpoint >= rows.size() || task >= rows[checkpoint].size())
        throw StateError("accuracy matrix cell (" + std::to_string(checkpoint) + "," +
                         std::to_string(task) + ") is undefined");
    return rows[checkpoint][task];
}

void AccuracyMatrix::append_checkpoint(std::vector<double> accuracies) {
    if (accuracies.size() != rows.size() + 1)
        throw StateError("checkpoint row must cover exactly the tasks seen so far");
    rows.push_back(std::move(accuracies));
}

double evaluate_accuracy(const ModelParams& params, const Dataset& dataset) {
    if (dataset.size() == 0) throw InputError("evaluate_accuracy: empty dataset");
    const auto preds = predict(params, dataset.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == dataset.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

double final_avg_accuracy(const AccuracyMatrix& matrix) {
    if (matrix.rows.empty()) throw StateError("empty accuracy matrix");
    const auto& last = matrix.rows.back();
    if (last.size() != matrix.rows.size()) throw StateError("last checkpoint row incomplete");
    return std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(last.size());
}

double forgetting_measure(const AccuracyMatrix& matrix) {
    const std::size_t k = matrix.rows.size();
    if (k < 2) throw StateError("forgetting measure needs at least 2 tasks");
    const auto& last = matrix.rows.back();
    if (last.size() != k) throw StateError("last checkpoint row incomplete");
    double total = 0.0;
    for (std::size_t task = 0; task + 1 < k; ++task) {
        double best = 0.0;
        for (std::size_t cp = task; cp < k; ++cp) best = std::max(best, matrix.at(cp, task));
        total += best - last[task];
    }
    return total / static_cast<double>(k - 1);
}

MemorizedCurves memorized_subset_curves(const std::vector<ModelParams>& checkpoints,
                                        const std::vector<Dataset>& train_splits,
                                        const std::vector<Dataset>& test_splits,
                                        const std::vector<std::vector<std::uint64_t>>& memorized_ids) {
    const std::size_t tasks = train_splits.size();
    if (test_splits.size() != tasks || memorized_ids.size() != tasks ||
        checkpoints.size() != tasks)
        throw InputError("memorized_subset_curves: per-task inputs disagree in length");

    MemorizedCurves curves;
    curves.memorized_acc.resize(tasks);
    curves.test_acc.resize(tasks);
    for (std::size_t task = 0; task < tasks; ++task) {
        const std::unordered_set<std::uint64_t> wanted(memorized_ids[task].begin(),
                                                       memorized_ids[task].end());
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < train_splits[task].size(); ++i)
            if (wanted.contains(train_splits[task].sample_ids[i])) rows.push_back(i);
        const Dataset memorized = train_splits[task].take(rows);

        for (std::size_t cp = 0; cp < checkpoints.size(); ++cp) {
            curves.test_acc[task].push_back(evaluate_accuracy(checkpoints[cp], test_splits[task]));
            if (memorized.size() == 0)
                curves.memorized_acc[task].push_back(std::nullopt);
            else
                curves.memorized_acc[task].push_back(evaluate_accuracy(checkpoints[cp], memorized));
        }
    }
    return curves;
}

ProbeResult train_linear_probe(const Matrix& features, const std::vector<std::uint32_t>& labels,
                               const ProbeConfig& config) {
    if (features.rows != labels.size()) throw ShapeError("probe: feature/label count mismatch");
    std::uint32_t classes = 0;
    for (std::uint32_t y : labels) classes = std::max(classes, y + 1);
    std::unordered_set<std::uint32_t> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) throw InputError("probe: labels contain a single class");

    // stratified holdout split
    std::map<std::uint32_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    Xoshiro256 rng(config.seed);
    std::vector<std::size_t> train_rows, test_rows;
    for (auto& [cls, indices] : by_class) {
        rng.shuffle(indices);
        const std::size_t n_test = static_cast<std::size_t>(
            std::floor(config.test_fraction * static_cast<double>(indices.size())));
        test_rows.insert(test_rows.end(), indices.begin(), indices.begin() + n_test);
        train_rows.insert(train_rows.end(), indices.begin() + n_test, indices.end());
    }

    const std::size_t d = features.cols;
    auto gather = [&](const std::vector<std::size_t>& rows, Matrix& x,
                      std::vector<std::uint32_t>& y) {
        x = Matrix(rows.size(), d);
        y.resize(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy(features.row_ptr(rows[i]), features.row_ptr(rows[i]) + d, x.row_ptr(i));
            y[i] = labels[rows[i]];
        }
    };
    Matrix x_train, x_test;
    std::vector<std::uint32_t> y_train, y_test;
    gather(train_rows, x_train, y_train);
    gather(test_rows, x_test, y_test);

    ProbeResult probe;
    probe.weights = Matrix(classes, d);
    probe.biases.assign(classes, 0.0);

    const double inv_n = 1.0 / static_cast<double>(x_train.rows);
    double prev_loss = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        Matrix logits = kernels::matmul_nt(x_train, probe.weights);
        kernels::add_row_vector(logits, probe.biases);
        double loss = 0.0;
        for (std::size_t i = 0; i < logits.rows; ++i) {
            double* row = logits.row_ptr(i);
            double maxv = row[0];
            for (std::size_t j = 1; j < classes; ++j) maxv = std::max(maxv, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < classes; ++j) sum += std::exp(row[j] - maxv);
            const double lse = maxv + std::log(sum);
            loss += lse - row[y_train[i]];
            for (std::size_t j = 0; j < classes; ++j) row[j] = std::exp(row[j] - lse);
            row[y_train[i]] -= 1.0;
            for (std::size_t j = 0; j < classes; ++j) row[j] *= inv_n;
        }
        loss *= inv_n;

        const Matrix grad_w = kernels::matmul_tn(logits, x_train);
        const auto grad_b = kernels::column_sums(logits);
        for (std::size_t i = 0; i < probe.weights.data.size(); ++i)
            probe.weights.data[i] -= config.learning_rate * grad_w.data[i];
        for (std::size_t j = 0; j < classes; ++j)
            probe.biases[j] -= config.learning_rate * grad_b[j];

        if (std::abs(prev_loss - loss) < config.tolerance) break;
        prev_loss = loss;
    }

    // held-out accuracy
    Matrix logits = kernels::matmul_nt(x_test, probe.weights);
    kernels::add_row_vector(logits, probe.biases);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* row = logits.row_ptr(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < classes; ++j)
            if (row[j] > row[best]) best = j;
        if (static_cast<std::uint32_t>(best) == y_test[i]) ++correct;
    }
    probe.accuracy = x_test.rows == 0 ? 0.0
                                      : static_cast<double>(correct) / static_cast<double>(x_test.rows);
    return probe;
}

namespace {

bool is_constant(const std::vector<double>& x) {
    return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    return sxy / std::sqrt(sxx * syy);
}

// Average ranks, ties share the mean rank.
std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    std::int64_t concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx == 0.0 && dy == 0.0) continue;
            if (dx == 0.0)
                ++ties_x;
            else if (dy == 0.0)
                ++ties_y;
            else if ((dx > 0) == (dy > 0))
                ++concordant;
            else
                ++discordant;
        }
    }
    const double n0x = static_cast<double>(concordant + discordant + ties_x);
    const double n0y = static_cast<double>(concordant + discordant + ties_y);
    if (n0x == 0.0 || n0y == 0.0) throw NumericError("kendall tau-b undefined for constant input");
    return static_cast<double>(concordant - discordant) / std::sqrt(n0x * n0y);
}

}  // namespace

double correlate(const std::vector<double>& x, const std::vector<double>& y,
                 CorrelationMethod method) {
    if (x.size() != y.size()) throw InputError("correlate: lengths differ");
    if (x.size() < 2) throw InputError("correlate: need at least 2 points");
    switch (method) {
        case CorrelationMethod::pearson:
            if (is_constant(x) || is_constant(y))
                throw NumericError("pearson undefined for constant input");
            return pearson(x, y);
        case CorrelationMethod::spearman:
            if (is_constant(x) || is_constant(y))
                throw NumericError("spearman undefined for constant input");
            return pearson(average_ranks(x), average_ranks(y));
        case CorrelationMethod::kendall:
            return kendall_tau_b(x, y);
    }
    throw InputError("correlate: unknown method");
}

void save_accuracy_matrix_csv(const AccuracyMatrix& matrix, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.precision(17);
    out << "checkpoint";
    for (std::size_t t = 0; t < matrix.rows.size(); ++t) out << ",task" << t;
    out << "\n";
    for (std::size_t cp = 0; cp < matrix.rows.size(); ++cp) {
        out << cp;
        for (std::size_t t = 0; t < matrix.rows.size(); ++t) {
            out << ',';
            if (t < matrix.rows[cp].size()) out << matrix.rows[cp][t];
        }
        out << "\n";
    }
}

void save_curves_csv(const MemorizedCurves& curves, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.precision(17);
    out << "task,checkpoint,test_accuracy,memorized_accuracy\n";
    for (std::size_t task = 0; task < curves.test_acc.size(); ++task) {
        for (std::size_t cp = 0; cp < curves.test_acc[task].size(); ++cp) {
            out << task << ',' << cp << ',' << curves.test_acc[task][cp] << ',';
            if (curves.memorized_acc[task][cp]) out << *curves.memorized_acc[task][cp];
            out << "\n";
        }
    }
}

}  // namespace memrehearse
