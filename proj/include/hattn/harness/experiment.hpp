#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hattn/harness/config.hpp"
#include "hattn/harness/workload.hpp"

namespace hattn::harness {

// One row per (record, layer, head).
struct HeadMetrics {
    std::size_t record = 0;
    std::size_t layer = 0;
    std::size_t head = 0;
    StepMode mode = StepMode::kDecode;
    std::size_t n_q = 0;
    std::size_t window = 0;          // entries attended densely, kv_in included
    std::size_t archive = 0;         // store-tier entries visible to the step
    std::size_t context = 0;         // context cache entries of the head
    std::size_t attended_store = 0;  // store-tier entries attended (padding included)
    double max_err = 0.0;            // max |O_hybrid - O_oracle| over queries and coordinates
    double mean_err = 0.0;
    double eps = 0.0;                // dropped oracle mass, worst query
    double eps_mean = 0.0;           // dropped oracle mass, mean over queries
    double retained = 0.0;           // attended oracle mass, worst query
    double bound = 0.0;              // 2 * eps * max_c max_j |V[j][c]| + tolerance
    double bound_margin = 0.0;       // min over queries/coordinates of per-coordinate bound - error
    bool bound_ok = true;
    bool mass_ok = true;             // |retained + dropped - 1| <= 1e-6 on every query
};

// One row per (record, layer).
struct StepMetrics {
    std::size_t record = 0;
    std::size_t layer = 0;
    StepMode mode = StepMode::kDecode;
    std::size_t n_q = 0;
    std::size_t window = 0;
    std::size_t archive = 0;
    double mean_attended_store = 0.0;
    double max_err = 0.0;
    double eps_mean = 0.0;
    double eps_max = 0.0;
    double retained_min = 0.0;
    std::size_t task_count = 0;
    double t_baseline = 0.0;  // simulated, cost model
    double t_hybrid = 0.0;
};

struct Summary {
    std::size_t records = 0;
    std::size_t rows = 0;
    double max_err = 0.0;
    double mean_err = 0.0;
    double eps_mean = 0.0;
    double eps_p50 = 0.0;
    double eps_p90 = 0.0;
    double eps_p99 = 0.0;
    double eps_max = 0.0;
    double retained_mean = 0.0;
    double retained_min = 0.0;
    double context_fraction = 0.0;  // mean context / archive over decode rows with a non-empty archive
    double nodrop_max_err = 0.0;    // max error over rows that dropped nothing
    std::size_t bound_violations = 0;
    std::size_t mass_violations = 0;
    std::size_t nodrop_violations = 0;  // no-drop rows above the tolerance
    double t_baseline = 0.0;
    double t_hybrid = 0.0;
    double wall_seconds = 0.0;  // excluded from determinism comparisons
};

struct MetricsReport {
    std::vector<HeadMetrics> heads;
    std::vector<StepMetrics> steps;
    Summary summary;
};

// Applies defaults that depend on the cache shape (max_append = window
// capacity minus one block when left at 0).
WorkloadSpec effective_workload(const HarnessConfig& config);

// Runs the engine and the 64-bit oracle side by side on every record. When
// final_dump is given it receives the window and context dumps of every
// layer after the last record.
MetricsReport run_experiment(const HarnessConfig& config, const Workload& workload,
                             std::string* final_dump = nullptr);
MetricsReport run_experiment(const HarnessConfig& config);

std::string heads_csv(const MetricsReport& report);
std::string steps_csv(const MetricsReport& report);
std::string summary_header();
std::string summary_row(const Summary& s, bool with_wall_clock = true);
std::string summary_csv(const MetricsReport& report);
std::string report_text(const MetricsReport& report, const HarnessConfig& config);

// Writes heads.csv, steps.csv and summary.csv under dir (created if needed).
void write_report(const MetricsReport& report, const std::string& dir);
void write_text_file(const std::string& path, const std::string& text);

// Sweep axes: beta, window (tokens, multiple of blk_size), window_ratio
// (window / total tokens, rounded to whole blocks), batch.
struct SweepAxis {
    std::string param;
    std::vector<double> values;
};

HarnessConfig apply_param(HarnessConfig config, const std::string& param, double value);

struct SweepPoint {
    std::vector<double> values;  // one per axis
    Summary summary;
};

// Cartesian product of the axes, first axis outermost.
std::vector<SweepPoint> sweep(const HarnessConfig& config, const std::vector<SweepAxis>& axes);
// Columns: one per axis, then the summary columns.
std::string sweep_csv(const std::vector<SweepAxis>& axes, const std::vector<SweepPoint>& points,
                      bool with_wall_clock = true);

}  // namespace hattn::harness
