#include "hattn/hybrid_engine.hpp"

#include <algorithm>
#include <utility>

namespace hattn {

HeadShape ModelShape::head_shape() const {
    HeadShape s = HeadShape::with_default_scale(heads, head_dim);
    if (scale > 0.0) {
        s.scale = scale;
    }
    return s;
}

void ModelShape::validate() const {
    HATTN_CHECK(layers >= 1, "model needs at least one layer");
    head_shape().validate();
}

void EngineConfig::validate() const {
    model.validate();
    cache.validate();
    HATTN_CHECK(core_count >= 1, "core_count must be positive");
    HATTN_CHECK(batch >= 1, "batch must be positive");
}

struct HybridEngine::Layer {
    Layer(std::size_t id, const EngineConfig& cfg)
        : window(id, cfg.cache, cfg.model.heads, cfg.model.head_dim), store(cfg.model.heads, cfg.model.head_dim) {}

    WindowCache window;
    StoreTier store;
    WorkerPool::TaskGroup pending;
};

HybridEngine::HybridEngine(const EngineConfig& config) : config_(config) {
    config_.validate();
    shape_ = config_.model.head_shape();
    pool_ = std::make_unique<WorkerPool>(config_.threads);
    for (std::size_t l = 0; l < config_.model.layers; ++l) {
        layers_.push_back(std::make_unique<Layer>(l, config_));
    }
}

HybridEngine::~HybridEngine() {
    for (auto& layer : layers_) {
        try {
            layer->pending.wait();
        } catch (...) {
        }
    }
}

void HybridEngine::sync() {
    for (auto& layer : layers_) {
        auto pending = std::exchange(layer->pending, {});
        pending.wait();
    }
}

const WindowCache& HybridEngine::window(std::size_t layer) const { return layers_.at(layer)->window; }

const StoreTier& HybridEngine::store(std::size_t layer) const { return layers_.at(layer)->store; }

StepOutput HybridEngine::step(std::size_t layer, const StepInput& input) {
    return input.mode == StepMode::kDecode ? decode_step(layer, input) : append_step(layer, input);
}

StepOutput HybridEngine::decode_step(std::size_t layer, const StepInput& input) {
    HATTN_CHECK(input.mode == StepMode::kDecode, "decode_step needs decode input");
    HATTN_CHECK(input.num_queries() == 1, "decode steps carry exactly one query");
    return run_step(layer, input);
}

StepOutput HybridEngine::append_step(std::size_t layer, const StepInput& input) {
    HATTN_CHECK(input.mode == StepMode::kAppend, "append_step needs append input");
    HATTN_CHECK(input.num_queries() >= 1, "append steps carry at least one query");
    return run_step(layer, input);
}

namespace {

Matrix<float> gather_rows(const Matrix<float>& base, const Matrix<float>& from, std::span<const std::size_t> rows) {
    Matrix<float> out = base;
    out.reserve_rows(base.rows() + rows.size());
    for (std::size_t r : rows) {
        out.append_row(from.row(r));
    }
    return out;
}

Matrix<float> concat_rows(const Matrix<float>& a, const Matrix<float>& b) {
    Matrix<float> out(a.rows() + b.rows(), a.cols());
    std::copy(a.flat().begin(), a.flat().end(), out.flat().begin());
    std::copy(b.flat().begin(), b.flat().end(), out.flat().begin() + static_cast<std::ptrdiff_t>(a.flat().size()));
    return out;
}

}  // namespace

StepOutput HybridEngine::run_step(std::size_t layer_idx, const StepInput& input) {
    HATTN_CHECK(layer_idx < layers_.size(), "layer index out of range");
    Layer& layer = *layers_[layer_idx];
    const std::size_t heads = shape_.num_heads;
    const std::size_t n_q = input.num_queries();
    const std::size_t n_in = input.kv_in.size();
    HATTN_CHECK(input.q.size() == heads, "query head count mismatch");
    HATTN_CHECK(n_in == n_q, "kv_in must align with the query rows");
    for (const auto& q : input.q) {
        HATTN_CHECK(q.rows() == n_q && q.cols() == shape_.head_dim, "query shape mismatch");
    }
    HATTN_CHECK(input.kv_in.first_position == layer.window.next_position(), "position discontinuity in kv_in");

    // Store-tier work of the previous step must land before its context is read.
    std::exchange(layer.pending, {}).wait();

    const bool append = input.mode == StepMode::kAppend;
    const StoreTier& store = layer.store;
    const auto context = store.context();
    const float scale = static_cast<float>(shape_.scale);

    StepOutput out;
    out.store_positions.assign(heads, {});
    out.archive_size = store.size();
    out.context_sizes.resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        out.context_sizes[h] = h < context->heads.size() ? context->heads[h].size() : 0;
    }
    std::vector<HeadResult<float>> sparse(heads);

    // Sparse tasks over the context (decode) or the complete archive (append).
    std::vector<HeadGroupTask> tasks;
    if (append) {
        const std::size_t g = head_group_size(config_.batch, heads, config_.core_count);
        for (std::size_t first = 0; first < heads; first += g) {
            HeadGroupTask t;
            t.first_head = first;
            t.heads.resize(std::min(g, heads - first));
            tasks.push_back(std::move(t));
        }
        for (std::size_t h = 0; h < heads; ++h) {
            out.store_positions[h] = store.positions();
        }
    } else {
        tasks = pack_head_groups(store, *context, config_.batch, config_.core_count, config_.padding);
        for (const auto& t : tasks) {
            for (std::size_t j = 0; j < t.heads.size(); ++j) {
                auto& pos = out.store_positions[t.first_head + j];
                for (std::size_t i : t.heads[j].selected) {
                    pos.push_back(store.positions()[i]);
                }
                for (std::size_t i : t.heads[j].padding) {
                    pos.push_back(store.positions()[i]);
                }
            }
        }
    }
    out.task_count = tasks.size();

    auto sparse_job = [&](std::size_t t) {
        const HeadGroupTask& task = tasks[t];
        for (std::size_t j = 0; j < task.heads.size(); ++j) {
            const std::size_t h = task.first_head + j;
            if (append) {
                sparse[h] = attend_head(input.q[h], store.head(h).keys, store.head(h).values, scale, true);
                continue;
            }
            const HeadContext& ctx = context->heads[h];
            const auto& padding = task.heads[j].padding;
            if (padding.empty()) {
                sparse[h] = attend_head(input.q[h], ctx.keys, ctx.values, scale, true);
            } else {
                sparse[h] = attend_head(input.q[h], gather_rows(ctx.keys, store.head(h).keys, padding),
                                        gather_rows(ctx.values, store.head(h).values, padding), scale, true);
            }
        }
    };
    auto sparse_group = pool_->submit(tasks.size(), sparse_job);

    // Dense attention over window + kv_in on the calling thread.
    HeadMatrices<float> win_k;
    HeadMatrices<float> win_v;
    layer.window.gather(win_k, win_v);
    out.window_positions = layer.window.positions();
    for (std::size_t i = 0; i < n_in; ++i) {
        out.window_positions.push_back(input.kv_in.first_position + static_cast<std::int64_t>(i));
    }
    std::vector<HeadResult<float>> dense(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        dense[h] = attend_head(input.q[h], concat_rows(win_k[h], input.kv_in.keys[h]),
                               concat_rows(win_v[h], input.kv_in.values[h]), scale, true);
    }

    sparse_group.wait();

    out.merged.heads.reserve(heads);
    out.a_gpu.resize(heads);
    out.a_cpu.resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        out.a_cpu[h] = std::move(sparse[h].weights);
        sparse[h].has_weights = false;
        out.a_gpu[h] = std::move(dense[h].weights);
        dense[h].has_weights = false;
        out.merged.heads.push_back(merge_states(sparse[h], dense[h]));
    }

    // Window bookkeeping: MAW update, eviction, insertion of kv_in.
    const std::size_t win_size = layer.window.size();
    HeadVectors maw_old(heads);
    HeadVectors maw_new(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::vector<float> mean = mean_rows(out.a_gpu[h]);
        maw_old[h].assign(mean.begin(), mean.begin() + static_cast<std::ptrdiff_t>(win_size));
        maw_new[h].assign(mean.begin() + static_cast<std::ptrdiff_t>(win_size), mean.end());
    }
    layer.window.update_maw(maw_old, config_.cache.alpha);
    auto evicted = layer.window.evict_if_full(n_in);
    layer.window.append_kv(input.kv_in, maw_new);

    HeadVectors a_cpu_mean;
    if (append && store.size() > 0) {
        a_cpu_mean.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            a_cpu_mean.push_back(mean_rows(out.a_cpu[h]));
        }
    }
    if (!evicted.empty() || !a_cpu_mean.empty()) {
        const double beta = config_.cache.beta;
        const std::size_t divisor = win_size + n_in;
        auto job = [&store = layer.store, beta, divisor, blocks = std::make_shared<std::vector<KvBlock>>(std::move(evicted)),
                    a_cpu = std::make_shared<HeadVectors>(std::move(a_cpu_mean))](std::size_t) {
            if (!a_cpu->empty()) {
                reevaluate(store, *a_cpu, beta);
            }
            offload(store, std::move(*blocks), beta, divisor);
        };
        layer.pending = pool_->submit(1, job);
    }
    return out;
}

SequenceResult run_sequence(const EngineConfig& config, const Workload& workload, const StepObserver& observer,
                            bool keep_outputs) {
    HATTN_CHECK(workload.heads == config.model.heads && workload.head_dim == config.model.head_dim,
                "workload shape differs from the engine's model shape");
    SequenceResult result;
    result.engine = std::make_unique<HybridEngine>(config);
    const std::size_t layers = config.model.layers;
    if (keep_outputs) {
        result.outputs.reserve(workload.steps.size());
    }
    for (std::size_t r = 0; r < workload.steps.size(); ++r) {
        const auto& record = workload.steps[r];
        HATTN_CHECK(record.size() >= layers, "workload exhausted mid-layer");
        std::vector<HeadMatrices<float>> per_layer;
        for (std::size_t l = 0; l < layers; ++l) {
            StepOutput o = result.engine->step(l, record[l]);
            if (observer) {
                observer(r, l, record[l], o);
            }
            if (keep_outputs) {
                HeadMatrices<float> heads_out;
                heads_out.reserve(o.merged.heads.size());
                for (auto& h : o.merged.heads) {
                    heads_out.push_back(std::move(h.output));
                }
                per_layer.push_back(std::move(heads_out));
            }
        }
        if (keep_outputs) {
            result.outputs.push_back(std::move(per_layer));
        }
    }
    result.engine->sync();
    return result;
}

}  // namespace hattn
