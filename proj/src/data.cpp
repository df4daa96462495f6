#include "memrehearse/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "memrehearse/errors.hpp"
#include "memrehearse/rng.hpp"

namespace memrehearse {

namespace {

// Head cluster means are drawn at this multiple of head_spread so classes
// are separated but tail clusters can still land near foreign territory.
constexpr double kClassMeanScale = 1.0;

constexpr char kMagic[4] = {'M', 'R', 'D', 'S'};
constexpr std::uint16_t kFormatVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
    unsigned char bytes[sizeof(T)];
    std::uint64_t v;
    if constexpr (std::is_same_v<T, double>) {
        std::uint64_t bits;
        std::memcpy(&bits, &value, sizeof(bits));
        v = bits;
    } else {
        v = static_cast<std::uint64_t>(value);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!in) throw FormatError("truncated payload");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
        double d;
        std::memcpy(&d, &v, sizeof(d));
        return d;
    } else {
        return static_cast<T>(v);
    }
}

std::vector<double> random_unit_vector(Xoshiro256& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& x : v) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (double& x : v) x /= norm;
    return v;
}

}  // namespace

void LongTailSpec::validate() const {
    if (class_count == 0) throw ConfigError("class_count must be >= 1");
    if (feature_dim == 0) throw ConfigError("feature_dim must be >= 1");
    if (head_samples_per_class == 0) throw ConfigError("head_samples_per_class must be >= 1");
    if (head_spread <= 0.0 || noise <= 0.0) throw ConfigError("spreads must be positive");
    if (tail_offset < 0.0) throw ConfigError("tail_offset must be nonnegative");
    if (tail_samples_per_cluster * 5 > head_samples_per_class)
        throw ConfigError("tail_samples_per_cluster must be at most 20% of head_samples_per_class");
}

Dataset Dataset::take(const std::vector<std::size_t>& row_indices) const {
    Dataset out;
    out.class_count = class_count;
    out.features = Matrix(row_indices.size(), features.cols);
    out.labels.reserve(row_indices.size());
    out.sample_ids.reserve(row_indices.size());
    out.provenance.reserve(row_indices.size());
    for (std::size_t r = 0; r < row_indices.size(); ++r) {
        const std::size_t src = row_indices[r];
        if (src >= size()) throw InputError("row index " + std::to_string(src) + " out of range");
        std::copy(features.row_ptr(src), features.row_ptr(src) + features.cols, out.features.row_ptr(r));
        out.labels.push_back(labels[src]);
        out.sample_ids.push_back(sample_ids[src]);
        out.provenance.push_back(provenance.empty() ? 0 : provenance[src]);
    }
    return out;
}

Dataset generate_longtail(const LongTailSpec& spec) {
    spec.validate();
    const std::size_t per_class =
        spec.head_samples_per_class +
        static_cast<std::size_t>(spec.tail_clusters_per_class) * spec.tail_samples_per_cluster;
    const std::size_t n = per_class * spec.class_count;
    const std::size_t d = spec.feature_dim;

    Dataset ds;
    ds.class_count = spec.class_count;
    ds.features = Matrix(n, d);
    ds.labels.reserve(n);
    ds.sample_ids.reserve(n);
    ds.provenance.reserve(n);

    Xoshiro256 rng(spec.seed);
    std::size_t row = 0;
    for (std::uint32_t c = 0; c < spec.class_count; ++c) {
        std::vector<double> mean(d);
        for (double& x : mean) x = kClassMeanScale * spec.head_spread * rng.normal();

        for (std::uint32_t i = 0; i < spec.head_samples_per_class; ++i, ++row) {
            double* out = ds.features.row_ptr(row);
            for (std::size_t j = 0; j < d; ++j) out[j] = mean[j] + spec.head_spread * rng.normal();
            ds.labels.push_back(c);
            ds.sample_ids.push_back(row);
            ds.provenance.push_back(0);
        }
        for (std::uint32_t t = 0; t < spec.tail_clusters_per_class; ++t) {
            const std::vector<double> dir = random_unit_vector(rng, d);
            for (std::uint32_t i = 0; i < spec.tail_samples_per_cluster; ++i, ++row) {
                double* out = ds.features.row_ptr(row);
                for (std::size_t j = 0; j < d; ++j)
                    out[j] = mean[j] + spec.tail_offset * dir[j] + spec.noise * rng.normal();
                ds.labels.push_back(c);
                ds.sample_ids.push_back(row);
                ds.provenance.push_back(1);
            }
        }
    }
    return ds;
}

TaskStream split_tasks(const Dataset& dataset, std::uint32_t num_tasks, std::uint64_t seed) {
    if (num_tasks == 0) throw ConfigError("num_tasks must be >= 1");
    if (dataset.class_count % num_tasks != 0)
        throw ConfigError("class_count must be divisible by num_tasks");

    TaskStream stream;
    stream.classes_per_task = dataset.class_count / num_tasks;
    stream.class_order.resize(dataset.class_count);
    for (std::uint32_t c = 0; c < dataset.class_count; ++c) stream.class_order[c] = c;
    Xoshiro256 rng(seed);
    rng.shuffle(stream.class_order);

    for (std::uint32_t t = 0; t < num_tasks; ++t) {
        std::unordered_set<std::uint32_t> task_classes;
        for (std::uint32_t j = 0; j < stream.classes_per_task; ++j)
            task_classes.insert(stream.class_order[t * stream.classes_per_task + j]);
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < dataset.size(); ++i)
            if (task_classes.contains(dataset.labels[i])) rows.push_back(i);
        stream.tasks.push_back(dataset.take(rows));
    }
    return stream;
}

Dataset subset_classes(const Dataset& dataset, const std::unordered_set<std::uint32_t>& class_ids) {
    for (std::uint32_t c : class_ids)
        if (c >= dataset.class_count) throw InputError("unknown class id " + std::to_string(c));
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (class_ids.contains(dataset.labels[i])) rows.push_back(i);
    return dataset.take(rows);
}

Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must be in (0,1]");
    std::map<std::uint32_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset.labels[i]].push_back(i);

    Xoshiro256 rng(seed);
    std::vector<std::size_t> rows;
    for (auto& [cls, indices] : by_class) {
        const std::size_t keep = static_cast<std::size_t>(
            std::floor(fraction * static_cast<double>(indices.size())));
        rng.shuffle(indices);
        rows.insert(rows.end(), indices.begin(), indices.begin() + keep);
    }
    std::sort(rows.begin(), rows.end());
    return dataset.take(rows);
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double test_fraction,
                                             std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw ConfigError("test_fraction must be in [0,1)");
    std::map<std::uint32_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset.labels[i]].push_back(i);

    Xoshiro256 rng(seed);
    std::vector<std::size_t> train_rows, test_rows;
    for (auto& [cls, indices] : by_class) {
        const std::size_t n_test = static_cast<std::size_t>(
            std::floor(test_fraction * static_cast<double>(indices.size())));
        rng.shuffle(indices);
        test_rows.insert(test_rows.end(), indices.begin(), indices.begin() + n_test);
        train_rows.insert(train_rows.end(), indices.begin() + n_test, indices.end());
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());
    return {dataset.take(train_rows), dataset.take(test_rows)};
}

void save_dataset(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write(kMagic, 4);
    write_le<std::uint16_t>(out, kFormatVersion);
    write_le<std::uint64_t>(out, dataset.size());
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.dim()));
    write_le<std::uint32_t>(out, dataset.class_count);
    for (double x : dataset.features.data) write_le<double>(out, x);
    for (std::uint32_t y : dataset.labels) write_le<std::uint32_t>(out, y);
    for (std::uint64_t id : dataset.sample_ids) write_le<std::uint64_t>(out, id);
    for (std::size_t i = 0; i < dataset.size(); ++i)
        write_le<std::uint8_t>(out, dataset.provenance.empty() ? 0 : dataset.provenance[i]);
    if (!out) throw FormatError("write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic bytes");
    const auto version = read_le<std::uint16_t>(in);
    if (version != kFormatVersion) throw FormatError("unsupported format version");
    const auto n = read_le<std::uint64_t>(in);
    const auto d = read_le<std::uint32_t>(in);
    const auto c = read_le<std::uint32_t>(in);

    Dataset ds;
    ds.class_count = c;
    ds.features = Matrix(n, d);
    for (double& x : ds.features.data) x = read_le<double>(in);
    ds.labels.resize(n);
    for (auto& y : ds.labels) y = read_le<std::uint32_t>(in);
    ds.sample_ids.resize(n);
    for (auto& id : ds.sample_ids) id = read_le<std::uint64_t>(in);
    ds.provenance.resize(n);
    for (auto& p : ds.provenance) p = read_le<std::uint8_t>(in);
    return ds;
}

void export_dataset_csv(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out << "sample_id,label,provenance";
    for (std::size_t j = 0; j < dataset.dim(); ++j) out << ",f" << j;
    out << "\n";
    out.precision(17);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        out << dataset.sample_ids[i] << ',' << dataset.labels[i] << ','
            << int(dataset.provenance.empty() ? 0 : dataset.provenance[i]);
        const double* row = dataset.features.row_ptr(i);
        for (std::size_t j = 0; j < dataset.dim(); ++j) out << ',' << row[j];
        out << "\n";
    }
}

}  // namespace memrehearse
