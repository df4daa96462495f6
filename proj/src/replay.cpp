#include "memrehearse/replay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>

#include "memrehearse/errors.hpp"

namespace memrehearse {

void reservoir_insert(MemoryBuffer& buffer, BufferEntry item) {
    ++buffer.seen_count;
    if (buffer.size() < buffer.capacity) {
        buffer.entries.push_back(std::move(item));
        return;
    }
    const std::uint64_t slot = buffer.rng.uniform_int(buffer.seen_count);
    if (slot < buffer.capacity) buffer.entries[slot] = std::move(item);
}

namespace {

// Index of a uniformly chosen entry of the largest class, ties uniform.
std::size_t largest_class_victim(MemoryBuffer& buffer,
                                 const std::vector<std::size_t>& candidates) {
    std::map<std::uint32_t, std::vector<std::size_t>> by_class;
    for (std::size_t i : candidates) by_class[buffer.entries[i].label].push_back(i);
    std::size_t largest = 0;
    for (const auto& [cls, members] : by_class) largest = std::max(largest, members.size());
    std::vector<std::uint32_t> largest_classes;
    for (const auto& [cls, members] : by_class)
        if (members.size() == largest) largest_classes.push_back(cls);
    const std::uint32_t victim_class =
        largest_classes[buffer.rng.uniform_int(largest_classes.size())];
    const auto& members = by_class[victim_class];
    return members[buffer.rng.uniform_int(members.size())];
}

}  // namespace

namespace {

std::map<std::uint32_t, std::size_t> class_counts(const MemoryBuffer& buffer) {
    std::map<std::uint32_t, std::size_t> counts;
    for (const BufferEntry& e : buffer.entries) counts[e.label]++;
    return counts;
}

}  // namespace

void balanced_reservoir_insert(MemoryBuffer& buffer, BufferEntry item) {
    ++buffer.seen_count;
    if (buffer.capacity == 0) return;
    if (buffer.seen_count > buffer.capacity) {
        const double accept = static_cast<double>(buffer.capacity) /
                              static_cast<double>(buffer.seen_count);
        if (buffer.rng.uniform() >= accept) return;
    }

    auto counts = class_counts(buffer);
    std::size_t max_count = 0, min_count = buffer.size();
    for (const auto& [cls, count] : counts) {
        max_count = std::max(max_count, count);
        min_count = std::min(min_count, count);
    }
    const std::size_t own = counts.count(item.label) ? counts[item.label] : 0;

    // a fully represented class swaps within itself, leaving counts intact
    if (!counts.empty() && own == max_count && (min_count < max_count || buffer.size() == buffer.capacity)) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < buffer.size(); ++i)
            if (buffer.entries[i].label == item.label) members.push_back(i);
        buffer.entries[members[buffer.rng.uniform_int(members.size())]] = std::move(item);
        return;
    }

    // otherwise append, then evict from the largest class until the balance
    // invariant (max - min <= 1) and the capacity bound hold again
    buffer.entries.push_back(std::move(item));
    for (;;) {
        counts = class_counts(buffer);
        max_count = 0;
        min_count = buffer.size();
        for (const auto& [cls, count] : counts) {
            max_count = std::max(max_count, count);
            min_count = std::min(min_count, count);
        }
        if (buffer.size() <= buffer.capacity && max_count <= min_count + 1) break;
        std::vector<std::size_t> all(buffer.size());
        std::iota(all.begin(), all.end(), 0);
        const std::size_t victim = largest_class_victim(buffer, all);
        buffer.entries.erase(buffer.entries.begin() + static_cast<std::ptrdiff_t>(victim));
    }
}

ReplayBatch sample_minibatch(const MemoryBuffer& buffer, std::size_t batch_size, Xoshiro256& rng) {
    ReplayBatch batch;
    if (buffer.entries.empty() || batch_size == 0) {
        batch.features = Matrix(0, 0);
        return batch;
    }
    const std::size_t dim = buffer.entries.front().features.size();
    std::vector<std::size_t> picks;
    if (batch_size >= buffer.size()) {
        picks.resize(buffer.size());
        std::iota(picks.begin(), picks.end(), 0);
        for (std::size_t i = buffer.size(); i < batch_size; ++i)
            picks.push_back(static_cast<std::size_t>(rng.uniform_int(buffer.size())));
    } else {
        std::vector<std::size_t> pool(buffer.size());
        std::iota(pool.begin(), pool.end(), 0);
        for (std::size_t i = 0; i < batch_size; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(pool.size() - i));
            std::swap(pool[i], pool[j]);
            picks.push_back(pool[i]);
        }
    }
    batch.features = Matrix(picks.size(), dim);
    batch.labels.resize(picks.size());
    for (std::size_t i = 0; i < picks.size(); ++i) {
        const BufferEntry& e = buffer.entries[picks[i]];
        std::copy(e.features.begin(), e.features.end(), batch.features.row_ptr(i));
        batch.labels[i] = e.label;
    }
    return batch;
}

namespace {

std::vector<VScore> sorted_finite(const std::vector<VScore>& scores) {
    std::vector<VScore> finite;
    for (const VScore& s : scores)
        if (s.v != kNeverLearned) finite.push_back(s);
    std::sort(finite.begin(), finite.end(), [](const VScore& a, const VScore& b) {
        return a.v != b.v ? a.v < b.v : a.sample_id < b.sample_id;
    });
    return finite;
}

std::vector<std::uint64_t> pick_bottom(const std::vector<VScore>& finite, std::size_t quota) {
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < std::min(quota, finite.size()); ++i)
        out.push_back(finite[i].sample_id);
    return out;
}

std::vector<std::uint64_t> pick_top(const std::vector<VScore>& finite, std::size_t quota) {
    std::vector<VScore> desc = finite;
    std::sort(desc.begin(), desc.end(), [](const VScore& a, const VScore& b) {
        return a.v != b.v ? a.v > b.v : a.sample_id < b.sample_id;
    });
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < std::min(quota, desc.size()); ++i) out.push_back(desc[i].sample_id);
    return out;
}

std::vector<std::uint64_t> pick_middle(const std::vector<VScore>& finite, std::size_t quota) {
    if (finite.size() <= quota) return pick_bottom(finite, quota);
    const std::size_t lo = (finite.size() - quota) / 2;
    std::vector<std::uint64_t> out;
    for (std::size_t i = lo; i < lo + quota; ++i) out.push_back(finite[i].sample_id);
    return out;
}

}  // namespace

std::vector<std::uint64_t> select_quota(const std::vector<VScore>& v_scores, std::size_t quota,
                                        const SelectorMode& mode) {
    const std::vector<VScore> finite = sorted_finite(v_scores);
    if (quota == 0) return {};
    switch (mode.kind) {
        case SelectorMode::Kind::bottom_k:
            return pick_bottom(finite, quota);
        case SelectorMode::Kind::top_k:
            return pick_top(finite, quota);
        case SelectorMode::Kind::middle_k:
            return pick_middle(finite, quota);
        case SelectorMode::Kind::mixed: {
            if (finite.size() <= quota) return pick_bottom(finite, quota);
            const std::size_t top_quota = static_cast<std::size_t>(
                std::ceil(mode.top_fraction * static_cast<double>(quota)));
            std::vector<std::uint64_t> out = pick_top(finite, std::min(top_quota, quota));
            std::vector<VScore> remaining;
            for (const VScore& s : finite)
                if (std::find(out.begin(), out.end(), s.sample_id) == out.end())
                    remaining.push_back(s);
            const std::size_t base_quota = quota - out.size();
            const auto base = mode.mixed_base == SelectorMode::Kind::middle_k
                                  ? pick_middle(remaining, base_quota)
                                  : pick_bottom(remaining, base_quota);
            out.insert(out.end(), base.begin(), base.end());
            return out;
        }
    }
    throw InputError("select_quota: unknown mode");
}

void end_of_task_replace(MemoryBuffer& buffer, const Dataset& task_data,
                         const ProxyScoreTable& proxy, const SelectorMode& mode,
                         std::uint32_t task_index, std::uint32_t tasks_seen) {
    if (tasks_seen == 0) throw InputError("end_of_task_replace: tasks_seen must be >= 1");

    // per-class quota: the current task holds floor(m / tasks_seen) slots,
    // split evenly with the remainder going to the lowest class ids
    std::map<std::uint32_t, std::vector<VScore>> by_class;
    std::unordered_map<std::uint64_t, std::size_t> row_of;
    for (std::size_t i = 0; i < task_data.size(); ++i) {
        const std::uint64_t id = task_data.sample_ids[i];
        const auto it = proxy.index.find(id);
        if (it == proxy.index.end())
            throw InputError("end_of_task_replace: proxy table does not cover sample " +
                             std::to_string(id));
        by_class[task_data.labels[i]].push_back({id, proxy.v[it->second]});
        row_of[id] = i;
    }
    const std::size_t total_current = buffer.capacity / tasks_seen;
    const std::size_t n_classes = by_class.size();
    if (n_classes == 0) return;
    const std::size_t base = total_current / n_classes;
    const std::size_t remainder = total_current % n_classes;

    std::vector<std::uint64_t> selected;
    std::size_t class_rank = 0;
    for (const auto& [cls, scores] : by_class) {
        const std::size_t quota = base + (class_rank < remainder ? 1 : 0);
        const auto picks = select_quota(scores, quota, mode);
        selected.insert(selected.end(), picks.begin(), picks.end());
        ++class_rank;
    }

    // drop the reservoir-placed entries of the current task
    std::erase_if(buffer.entries,
                  [&](const BufferEntry& e) { return e.task_index == task_index; });

    for (std::uint64_t id : selected) {
        const std::size_t row = row_of.at(id);
        BufferEntry entry;
        entry.sample_id = id;
        entry.features.assign(task_data.features.row_ptr(row),
                              task_data.features.row_ptr(row) + task_data.dim());
        entry.label = task_data.labels[row];
        entry.task_index = task_index;
        entry.provenance = BufferEntry::Provenance::selector;
        buffer.entries.push_back(std::move(entry));
    }

    // evict from over-represented old classes until the capacity holds
    while (buffer.size() > buffer.capacity) {
        std::vector<std::size_t> old_entries;
        for (std::size_t i = 0; i < buffer.size(); ++i)
            if (buffer.entries[i].task_index != task_index) old_entries.push_back(i);
        if (old_entries.empty()) {
            std::vector<std::size_t> all(buffer.size());
            std::iota(all.begin(), all.end(), 0);
            old_entries = all;
        }
        const std::size_t victim = largest_class_victim(buffer, old_entries);
        buffer.entries.erase(buffer.entries.begin() + static_cast<std::ptrdiff_t>(victim));
    }
}

void ReplayConfig::validate() const {
    if (!infinite && capacity == 0) throw ConfigError("buffer capacity must be >= 1");
    if (infinite && policy != BufferPolicy::reservoir)
        throw ConfigError("infinite buffer stores everything; selector or balanced policies conflict");
    if (top_fraction < 0.0 || top_fraction > 1.0)
        throw ConfigError("top_fraction must be in [0,1]");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw ConfigError("test_fraction must be in [0,1)");
    if (mixed_base != SelectorMode::Kind::bottom_k && mixed_base != SelectorMode::Kind::middle_k)
        throw ConfigError("mixed_base must be bottom_k or middle_k");
}

SelectorMode ReplayConfig::selector_mode() const {
    SelectorMode mode;
    mode.top_fraction = top_fraction;
    mode.mixed_base = mixed_base;
    switch (policy) {
        case BufferPolicy::bottom_k: mode.kind = SelectorMode::Kind::bottom_k; break;
        case BufferPolicy::middle_k: mode.kind = SelectorMode::Kind::middle_k; break;
        case BufferPolicy::top_k: mode.kind = SelectorMode::Kind::top_k; break;
        case BufferPolicy::mixed: mode.kind = SelectorMode::Kind::mixed; break;
        default: throw ConfigError("policy has no selector mode");
    }
    return mode;
}

namespace {

std::vector<std::size_t> old_task_entries(const MemoryBuffer& buffer, std::uint32_t current_task) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < buffer.size(); ++i)
        if (buffer.entries[i].task_index < current_task) rows.push_back(i);
    return rows;
}

// Replay draws come from past-task entries only, so a single-task stream
// reduces to stationary training.
ReplayBatch sample_old_tasks(const MemoryBuffer& buffer, std::size_t batch_size,
                             std::uint32_t current_task, Xoshiro256& rng) {
    const auto rows = old_task_entries(buffer, current_task);
    ReplayBatch batch;
    if (rows.empty() || batch_size == 0) {
        batch.features = Matrix(0, 0);
        return batch;
    }
    MemoryBuffer view(rows.size(), false, 0);
    for (std::size_t i : rows) view.entries.push_back(buffer.entries[i]);
    return sample_minibatch(view, batch_size, rng);
}

void accumulate(Gradients& into, const Gradients& other) {
    for (std::size_t l = 0; l < into.weights.size(); ++l) {
        for (std::size_t i = 0; i < into.weights[l].data.size(); ++i)
            into.weights[l].data[i] += other.weights[l].data[i];
        for (std::size_t i = 0; i < into.biases[l].size(); ++i)
            into.biases[l][i] += other.biases[l][i];
    }
}

}  // namespace

IncrementalResult train_incremental(const TaskStream& stream, const TrainConfig& train_config,
                                    const ReplayConfig& replay_config,
                                    const IncrementalOptions& options) {
    train_config.validate();
    replay_config.validate();
    if (stream.tasks.empty()) throw ConfigError("task stream is empty");

    IncrementalResult result;
    std::size_t total_train = 0;
    for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
        auto [train_split, test_split] = split_train_test(
            stream.tasks[t], replay_config.test_fraction, mix_seed(train_config.seed, 100 + t));
        total_train += train_split.size();
        result.train_splits.push_back(std::move(train_split));
        result.test_splits.push_back(std::move(test_split));
    }

    const std::size_t capacity = replay_config.infinite ? total_train : replay_config.capacity;
    // Algorithm line 18 is a plain reservoir insert; only the balanced
    // baseline keeps the balance invariant online. Selector policies rely on
    // end-of-task replacement, and balanced inserts would rebalance away the
    // (intentionally uneven) selector quotas mid-task.
    const bool balanced_inserts = replay_config.policy == BufferPolicy::balanced;
    MemoryBuffer buffer(capacity, balanced_inserts, mix_seed(train_config.seed, 3));

    const std::uint32_t class_universe = stream.tasks.front().class_count;
    std::vector<std::size_t> dims;
    dims.push_back(result.train_splits.front().dim());
    dims.insert(dims.end(), options.hidden_dims.begin(), options.hidden_dims.end());
    dims.push_back(class_universe);
    ModelParams params = init_network(dims, mix_seed(train_config.seed, 0));
    Xoshiro256 order_rng(mix_seed(train_config.seed, 1));
    Xoshiro256 replay_rng(mix_seed(train_config.seed, 2));

    const std::size_t batch_size = static_cast<std::size_t>(train_config.batch_size);
    if (options.record_trace) result.traces.resize(stream.tasks.size());

    for (std::uint32_t t = 0; t < stream.tasks.size(); ++t) {
        const Dataset& train = result.train_splits[t];
        ProxyScoreTable proxy = ProxyScoreTable::create(train.sample_ids);
        std::int64_t iteration = 0;

        std::vector<std::size_t> indices(train.size());
        std::iota(indices.begin(), indices.end(), 0);

        for (int epoch = 0; epoch < train_config.epochs_per_task; ++epoch) {
            order_rng.shuffle(indices);
            for (std::size_t start = 0; start < indices.size(); start += batch_size) {
                const std::size_t stop = std::min(start + batch_size, indices.size());
                Matrix x(stop - start, train.dim());
                std::vector<std::uint32_t> y(stop - start);
                std::vector<std::uint64_t> ids(stop - start);
                for (std::size_t i = start; i < stop; ++i) {
                    const std::size_t src = indices[i];
                    std::copy(train.features.row_ptr(src), train.features.row_ptr(src) + train.dim(),
                              x.row_ptr(i - start));
                    y[i - start] = train.labels[src];
                    ids[i - start] = train.sample_ids[src];
                }

                // proxy observation from the forward pass of the current minibatch
                const auto preds = predict(params, x);
                std::vector<std::uint8_t> correct(preds.size());
                for (std::size_t i = 0; i < preds.size(); ++i) correct[i] = preds[i] == y[i];
                proxy_observe(proxy, iteration, ids, correct);
                if (options.record_trace) result.traces[t].push_back({iteration, ids, correct});

                auto [loss, grads] = loss_and_grads(params, x, y);
                const ReplayBatch replay = sample_old_tasks(buffer, batch_size, t, replay_rng);
                if (replay.labels.size() > 0) {
                    auto [replay_loss, replay_grads] =
                        loss_and_grads(params, replay.features, replay.labels);
                    accumulate(grads, replay_grads);
                }
                sgd_step(params, grads, train_config, epoch);

                for (std::size_t i = 0; i < y.size(); ++i) {
                    BufferEntry entry;
                    entry.sample_id = ids[i];
                    entry.features.assign(x.row_ptr(i), x.row_ptr(i) + x.cols);
                    entry.label = y[i];
                    entry.task_index = t;
                    entry.provenance = BufferEntry::Provenance::reservoir;
                    if (buffer.balanced)
                        balanced_reservoir_insert(buffer, std::move(entry));
                    else
                        reservoir_insert(buffer, std::move(entry));
                }
                ++iteration;
            }
            if (replay_config.uses_selector() && replay_config.per_epoch_replace)
                end_of_task_replace(buffer, train, proxy, replay_config.selector_mode(), t, t + 1);
        }

        if (replay_config.uses_selector() && !replay_config.per_epoch_replace)
            end_of_task_replace(buffer, train, proxy, replay_config.selector_mode(), t, t + 1);

        result.proxy_tables.push_back(std::move(proxy));
        result.checkpoints.push_back(params);
        std::vector<double> row;
        for (std::uint32_t j = 0; j <= t; ++j)
            row.push_back(evaluate_accuracy(params, result.test_splits[j]));
        result.report.matrix.append_checkpoint(std::move(row));

        if (!all_finite(params)) throw NumericError("parameters diverged during task " + std::to_string(t));
    }

    result.report.acc = final_avg_accuracy(result.report.matrix);
    result.report.fm = stream.tasks.size() >= 2 ? forgetting_measure(result.report.matrix) : 0.0;
    result.final_params = std::move(params);
    result.final_buffer = buffer.entries;
    return result;
}

void save_buffer_csv(const std::vector<BufferEntry>& entries, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out << "sample_id,label,task_index,provenance\n";
    for (const BufferEntry& e : entries)
        out << e.sample_id << ',' << e.label << ',' << e.task_index << ','
            << (e.provenance == BufferEntry::Provenance::selector ? "selector" : "reservoir")
            << "\n";
}

BufferPolicy parse_policy(const std::string& name) {
    if (name == "reservoir") return BufferPolicy::reservoir;
    if (name == "balanced") return BufferPolicy::balanced;
    if (name == "bottomk") return BufferPolicy::bottom_k;
    if (name == "midk") return BufferPolicy::middle_k;
    if (name == "topk") return BufferPolicy::top_k;
    if (name == "mixed") return BufferPolicy::mixed;
    throw ConfigError("unknown policy '" + name + "'");
}

std::string policy_name(BufferPolicy policy) {
    switch (policy) {
        case BufferPolicy::reservoir: return "reservoir";
        case BufferPolicy::balanced: return "balanced";
        case BufferPolicy::bottom_k: return "bottomk";
        case BufferPolicy::middle_k: return "midk";
        case BufferPolicy::top_k: return "topk";
        case BufferPolicy::mixed: return "mixed";
    }
    return "unknown";
}

}  // namespace memrehearse
