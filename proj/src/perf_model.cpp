#include "hattn/perf_model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "hattn/contract.hpp"

namespace hattn::perf {

void DeviceSpec::validate() const {
    HATTN_CHECK(peak_flops > 0.0 && mem_bw > 0.0, "device throughput must be positive");
}

void LinkSpec::validate() const {
    HATTN_CHECK(bw > 0.0, "link bandwidth must be positive");
    HATTN_CHECK(latency >= 0.0, "link latency must be non-negative");
}

DeviceSpec default_gpu() { return {"A6000", 38.7e12, 768e9}; }

DeviceSpec default_cpu() { return {"Xeon-6430", 1.229e12, 500e9}; }

LinkSpec default_link() { return {32e9, 10e-6}; }

void WorkloadShape::validate() const {
    HATTN_CHECK(n_selected <= n_store, "n_selected exceeds n_store");
}

CostTerms attention_terms(std::size_t n_kv, const WorkloadShape& shape, const DeviceSpec& device) {
    device.validate();
    CostTerms t;
    if (n_kv == 0) {
        return t;
    }
    const double bh = static_cast<double>(shape.batch) * static_cast<double>(shape.heads);
    const double d = static_cast<double>(shape.head_dim);
    const double nq = static_cast<double>(shape.n_q);
    const double nkv = static_cast<double>(n_kv);
    const double elem = static_cast<double>(shape.bytes_per_elem);

    t.flops = bh * nq * nkv * 4.0 * d;
    t.bytes = 2.0 * bh * nkv * d * elem   // K and V
            + 2.0 * bh * nq * d * elem;   // Q in, O out
    t.compute_time = t.flops / device.peak_flops;
    t.memory_time = t.bytes / device.mem_bw;
    t.time = std::max(t.compute_time, t.memory_time);
    return t;
}

double attention_cost(std::size_t n_kv, const WorkloadShape& shape, const DeviceSpec& device) {
    return attention_terms(n_kv, shape, device).time;
}

double store_kv_bytes(const WorkloadShape& shape) {
    return 2.0 * static_cast<double>(shape.batch) * static_cast<double>(shape.heads) *
           static_cast<double>(shape.n_store) * static_cast<double>(shape.head_dim) *
           static_cast<double>(shape.bytes_per_elem);
}

double merge_bytes(const WorkloadShape& shape) {
    return static_cast<double>(shape.batch) * static_cast<double>(shape.heads) * static_cast<double>(shape.n_q) *
           static_cast<double>(shape.head_dim + 1) * static_cast<double>(shape.bytes_per_elem);
}

double HybridTime::total() const { return std::max(gpu_part, cpu_part) + merge; }

BaselineTime time_offload_baseline(const WorkloadShape& shape, const DeviceSpec& gpu, const LinkSpec& link) {
    shape.validate();
    link.validate();
    BaselineTime t;
    t.transfer = link.latency + store_kv_bytes(shape) / link.bw;
    t.compute = attention_cost(shape.n_window + shape.n_store + shape.n_q, shape, gpu);
    return t;
}

HybridTime time_hybrid(const WorkloadShape& shape, const DeviceSpec& gpu, const DeviceSpec& cpu, const LinkSpec& link,
                       double core_efficiency) {
    shape.validate();
    link.validate();
    HATTN_CHECK(core_efficiency > 0.0 && core_efficiency <= 1.0, "core_efficiency must lie in (0, 1]");
    HybridTime t;
    t.gpu_part = attention_cost(shape.n_window + shape.n_q, shape, gpu);
    t.cpu_part = attention_cost(shape.n_selected, shape, cpu) / core_efficiency;
    t.merge = link.latency + merge_bytes(shape) / link.bw;
    return t;
}

HeatmapCell evaluate_cell(std::size_t n_window, std::size_t n_store, std::size_t batch, const WorkloadShape& base,
                          const ModelSpecs& specs) {
    HATTN_CHECK(specs.retention_fraction >= 0.0 && specs.retention_fraction <= 1.0,
                "retention_fraction must lie in [0, 1]");
    WorkloadShape s = base;
    s.n_window = n_window;
    s.n_store = n_store;
    s.batch = batch;
    s.n_selected = std::min<std::size_t>(
        n_store, static_cast<std::size_t>(std::llround(specs.retention_fraction * static_cast<double>(n_store))));
    HeatmapCell c;
    c.n_window = n_window;
    c.n_store = n_store;
    c.batch = batch;
    c.baseline = time_offload_baseline(s, specs.gpu, specs.link);
    c.hybrid = time_hybrid(s, specs.gpu, specs.cpu, specs.link, specs.core_efficiency);
    c.speedup = c.baseline.total() / c.hybrid.total();
    return c;
}

std::vector<HeatmapCell> speedup_heatmap(const std::vector<std::size_t>& windows, const std::vector<std::size_t>& stores,
                                         const std::vector<std::size_t>& batches, const WorkloadShape& base,
                                         const ModelSpecs& specs) {
    HATTN_CHECK(!windows.empty() && !stores.empty() && !batches.empty(), "heatmap grid must be non-empty");
    std::vector<HeatmapCell> cells;
    cells.reserve(windows.size() * stores.size() * batches.size());
    for (std::size_t b : batches) {
        for (std::size_t w : windows) {
            for (std::size_t s : stores) {
                cells.push_back(evaluate_cell(w, s, b, base, specs));
            }
        }
    }
    return cells;
}

std::string heatmap_csv(const std::vector<HeatmapCell>& cells) {
    std::string out =
        "n_window,n_store,batch,t_baseline_transfer,t_baseline_compute,t_hybrid_gpu,t_hybrid_cpu,t_merge,speedup\n";
    for (const auto& c : cells) {
        out += fmt::format("{},{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.6f}\n", c.n_window, c.n_store, c.batch,
                           c.baseline.transfer, c.baseline.compute, c.hybrid.gpu_part, c.hybrid.cpu_part,
                           c.hybrid.merge, c.speedup);
    }
    return out;
}

}  // namespace hattn::perf
