#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace hattn::perf {

struct DeviceSpec {
    std::string name;
    double peak_flops = 0.0;  // operations per second
    double mem_bw = 0.0;      // bytes per second

    void validate() const;
};

struct LinkSpec {
    double bw = 0.0;       // bytes per second
    double latency = 0.0;  // seconds per transfer

    void validate() const;
};

// RTX A6000 / Xeon Gold 6430 / PCIe 4.0 x16 figures; the link latency is a
// modelling default.
DeviceSpec default_gpu();
DeviceSpec default_cpu();
LinkSpec default_link();

struct WorkloadShape {
    std::size_t batch = 1;
    std::size_t heads = 32;
    std::size_t head_dim = 128;
    std::size_t n_window = 0;
    std::size_t n_store = 0;
    std::size_t n_selected = 0;
    std::size_t n_q = 1;
    std::size_t bytes_per_elem = 2;

    void validate() const;
};

struct CostTerms {
    double flops = 0.0;
    double bytes = 0.0;
    double compute_time = 0.0;
    double memory_time = 0.0;
    double time = 0.0;  // max(compute_time, memory_time)

    bool memory_bound() const { return memory_time >= compute_time; }
};

// Roofline cost of attending shape.n_q queries against n_kv entries:
// 4 * head_dim flops per (query, entry, head); KV traffic plus query/output
// traffic. Zero entries cost nothing.
CostTerms attention_terms(std::size_t n_kv, const WorkloadShape& shape, const DeviceSpec& device);
double attention_cost(std::size_t n_kv, const WorkloadShape& shape, const DeviceSpec& device);

// Bytes of the store-tier KV pairs a load-to-device baseline has to move.
double store_kv_bytes(const WorkloadShape& shape);
// Bytes of the partial output plus LSE sent back for merging.
double merge_bytes(const WorkloadShape& shape);

struct BaselineTime {
    double transfer = 0.0;
    double compute = 0.0;
    double total() const { return transfer + compute; }
};

struct HybridTime {
    double gpu_part = 0.0;
    double cpu_part = 0.0;
    double merge = 0.0;
    double total() const;
};

BaselineTime time_offload_baseline(const WorkloadShape& shape, const DeviceSpec& gpu, const LinkSpec& link);
HybridTime time_hybrid(const WorkloadShape& shape, const DeviceSpec& gpu, const DeviceSpec& cpu, const LinkSpec& link,
                       double core_efficiency);

struct ModelSpecs {
    DeviceSpec gpu = default_gpu();
    DeviceSpec cpu = default_cpu();
    LinkSpec link = default_link();
    double core_efficiency = 0.5;
    double retention_fraction = 0.2;
};

struct HeatmapCell {
    std::size_t n_window = 0;
    std::size_t n_store = 0;
    std::size_t batch = 0;
    BaselineTime baseline;
    HybridTime hybrid;
    double speedup = 0.0;
};

// One cell per (batch, n_window, n_store), batch-major then window-major.
// n_selected = round(retention_fraction * n_store).
std::vector<HeatmapCell> speedup_heatmap(const std::vector<std::size_t>& windows, const std::vector<std::size_t>& stores,
                                         const std::vector<std::size_t>& batches, const WorkloadShape& base,
                                         const ModelSpecs& specs);

HeatmapCell evaluate_cell(std::size_t n_window, std::size_t n_store, std::size_t batch, const WorkloadShape& base,
                          const ModelSpecs& specs);

// CSV with header n_window,n_store,batch,t_baseline_transfer,
// t_baseline_compute,t_hybrid_gpu,t_hybrid_cpu,t_merge,speedup
std::string heatmap_csv(const std::vector<HeatmapCell>& cells);

}  // namespace hattn::perf
