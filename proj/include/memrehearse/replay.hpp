#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memrehearse/data.hpp"
#include "memrehearse/memorization.hpp"
#include "memrehearse/metrics.hpp"
#include "memrehearse/nn.hpp"
#include "memrehearse/rng.hpp"

namespace memrehearse {

enum class BufferPolicy { reservoir, balanced, bottom_k, middle_k, top_k, mixed };

struct SelectorMode {
    enum class Kind { bottom_k, middle_k, top_k, mixed };
    Kind kind = Kind::bottom_k;
    double top_fraction = 0.10;            // mixed only
    Kind mixed_base = Kind::bottom_k;      // mixed only: bottom_k or middle_k
};

struct BufferEntry {
    enum class Provenance : std::uint8_t { reservoir, selector };
    std::uint64_t sample_id = 0;
    std::vector<double> features;
    std::uint32_t label = 0;
    std::uint32_t task_index = 0;
    Provenance provenance = Provenance::reservoir;
};

struct MemoryBuffer {
    std::size_t capacity = 0;
    bool balanced = false;
    std::vector<BufferEntry> entries;
    std::uint64_t seen_count = 0;
    Xoshiro256 rng{0};

    MemoryBuffer(std::size_t cap, bool balanced_mode, std::uint64_t seed)
        : capacity(cap), balanced(balanced_mode), rng(seed) {}

    std::size_t size() const { return entries.size(); }
};

void reservoir_insert(MemoryBuffer& buffer, BufferEntry item);

// Eviction victim drawn uniformly from the currently largest class, ties
// broken uniformly; acceptance keeps the reservoir m/seen probability.
void balanced_reservoir_insert(MemoryBuffer& buffer, BufferEntry item);

struct ReplayBatch {
    Matrix features;
    std::vector<std::uint32_t> labels;
};

// Uniform without replacement; with replacement to fill up when the buffer
// holds fewer than batch_size entries (every entry still appears).
ReplayBatch sample_minibatch(const MemoryBuffer& buffer, std::size_t batch_size, Xoshiro256& rng);

struct VScore {
    std::uint64_t sample_id = 0;
    std::int64_t v = 0;  // kNeverLearned = never correctly classified
};

// Per-class selection of proxy-scored samples. Samples with the
// never-learned sentinel are excluded from every mode; if fewer finite
// values than quota exist, all finite values are returned.
std::vector<std::uint64_t> select_quota(const std::vector<VScore>& v_scores, std::size_t quota,
                                        const SelectorMode& mode);

// Removes the current task's reservoir-placed entries, inserts selector
// picks under the per-class quota, then evicts from over-represented old
// classes if capacity would be exceeded.
void end_of_task_replace(MemoryBuffer& buffer, const Dataset& task_data,
                         const ProxyScoreTable& proxy, const SelectorMode& mode,
                         std::uint32_t task_index, std::uint32_t tasks_seen);

struct ReplayConfig {
    std::size_t capacity = 500;
    bool infinite = false;
    BufferPolicy policy = BufferPolicy::reservoir;
    double top_fraction = 0.10;
    SelectorMode::Kind mixed_base = SelectorMode::Kind::bottom_k;
    bool per_epoch_replace = false;
    double test_fraction = 0.2;

    void validate() const;
    bool uses_selector() const {
        return policy == BufferPolicy::bottom_k || policy == BufferPolicy::middle_k ||
               policy == BufferPolicy::top_k || policy == BufferPolicy::mixed;
    }
    SelectorMode selector_mode() const;
};

struct TraceEvent {
    std::int64_t iteration = 0;
    std::vector<std::uint64_t> sample_ids;
    std::vector<std::uint8_t> correct;
};

struct IncrementalResult {
    ModelParams final_params;
    std::vector<ModelParams> checkpoints;   // after each task
    MetricsReport report;
    std::vector<ProxyScoreTable> proxy_tables;  // one per task
    std::vector<Dataset> train_splits;
    std::vector<Dataset> test_splits;
    std::vector<std::vector<TraceEvent>> traces;  // per task, only when recorded
    std::vector<BufferEntry> final_buffer;
};

struct IncrementalOptions {
    std::vector<std::size_t> hidden_dims = {64, 64};
    bool record_trace = false;
};

IncrementalResult train_incremental(const TaskStream& stream, const TrainConfig& train_config,
                                    const ReplayConfig& replay_config,
                                    const IncrementalOptions& options = {});

void save_buffer_csv(const std::vector<BufferEntry>& entries, const std::string& path);

BufferPolicy parse_policy(const std::string& name);
std::string policy_name(BufferPolicy policy);

}  // namespace memrehearse
