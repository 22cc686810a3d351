#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hattn/harness/workload.hpp"
#include "hattn/hybrid_engine.hpp"
#include "hattn/perf_model.hpp"

namespace hattn::harness {

// Cost-model settings: device specs plus the shape and grids used by the
// heatmap and breakdown commands.
struct PerfSettings {
    perf::ModelSpecs specs;
    perf::WorkloadShape shape;  // heads/head_dim/bytes_per_elem for the grids
    std::vector<std::size_t> windows{256, 512, 1024, 2048};
    std::vector<std::size_t> stores{0, 1024, 2048, 4096, 8192, 16384, 32768};
    std::vector<std::size_t> batches{1, 2, 4, 8};
    std::size_t breakdown_window = 1024;
    std::size_t breakdown_batch = 1;
    std::vector<std::size_t> breakdown_stores{32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768};
};

struct HarnessConfig {
    EngineConfig engine;
    WorkloadSpec workload;
    PerfSettings perf;
    double tolerance = 1e-5;        // oracle agreement when nothing is dropped
    double bound_tolerance = 1e-5;  // rounding allowance added to the dropped-mass bound

    HarnessConfig();
    void validate() const;
};

// INI text: sections [model] [cache] [engine] [run] [workload] [gpu] [cpu]
// [link] [perf]. Unknown sections or keys are errors. Lists are comma
// separated; append_events is "step:length,step:length".
HarnessConfig parse_config(const std::string& text);
HarnessConfig load_config(const std::string& path);
std::string format_config(const HarnessConfig& config);

std::vector<std::size_t> parse_size_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

}  // namespace hattn::harness
