#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "hattn/attention_math.hpp"
#include "hattn/kv_cache.hpp"
#include "hattn/sparsifier.hpp"
#include "hattn/worker_pool.hpp"

namespace hattn {

struct ModelShape {
    std::size_t layers = 1;
    std::size_t heads = 1;
    std::size_t head_dim = 1;
    double scale = 0.0;  // <= 0 selects 1/sqrt(head_dim)

    HeadShape head_shape() const;
    void validate() const;
};

struct EngineConfig {
    ModelShape model;
    CacheConfig cache;
    std::size_t core_count = 4;
    std::size_t batch = 1;
    PaddingMode padding = PaddingMode::kAttend;
    std::size_t threads = 0;  // worker threads; 0 runs everything on the caller

    void validate() const;
};

enum class StepMode { kDecode, kAppend };

struct StepInput {
    StepMode mode = StepMode::kDecode;
    HeadMatrices<float> q;  // [n_q x head_dim] per head
    KvChunk kv_in;          // n_q entries aligned with q

    std::size_t num_queries() const { return q.empty() ? 0 : q.front().rows(); }
};

struct StepOutput {
    AttentionResult<float> merged;  // output and lse per head, no weights
    HeadMatrices<float> a_gpu;      // window-tier weight rows, columns = window_positions
    HeadMatrices<float> a_cpu;      // store-tier weight rows, columns = store_positions[h]
    std::vector<std::int64_t> window_positions;
    std::vector<std::vector<std::int64_t>> store_positions;
    std::size_t archive_size = 0;             // archive entries when the step read the store tier
    std::vector<std::size_t> context_sizes;   // per head, at the same moment
    std::size_t task_count = 0;
};

// Per-layer step driver. Each step dispatches the sparse store-tier tasks,
// computes dense attention over window + kv_in, merges both partials by LSE
// fusion and then updates MAW, evicts and hands evicted blocks to the store
// tier in the background.
class HybridEngine {
public:
    explicit HybridEngine(const EngineConfig& config);
    ~HybridEngine();

    const EngineConfig& config() const { return config_; }
    std::size_t num_layers() const { return layers_.size(); }

    StepOutput step(std::size_t layer, const StepInput& input);
    StepOutput decode_step(std::size_t layer, const StepInput& input);
    StepOutput append_step(std::size_t layer, const StepInput& input);

    // Waits for all background store-tier work.
    void sync();

    // Call sync() first when background work may be pending.
    const WindowCache& window(std::size_t layer) const;
    const StoreTier& store(std::size_t layer) const;

private:
    struct Layer;

    StepOutput run_step(std::size_t layer, const StepInput& input);

    EngineConfig config_;
    HeadShape shape_;
    std::unique_ptr<WorkerPool> pool_;
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Input stream: steps[record][layer].
struct Workload {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t head_dim = 0;
    std::vector<std::vector<StepInput>> steps;
};

using StepObserver =
    std::function<void(std::size_t record, std::size_t layer, const StepInput& input, const StepOutput& output)>;

struct SequenceResult {
    std::unique_ptr<HybridEngine> engine;                // final cache state
    std::vector<std::vector<HeadMatrices<float>>> outputs;  // [record][layer] merged output per head
};

// Feeds every record through every layer in order.
SequenceResult run_sequence(const EngineConfig& config, const Workload& workload, const StepObserver& observer = {},
                            bool keep_outputs = true);

}  // namespace hattn
