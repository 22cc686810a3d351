#include "hattn/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

#include "hattn/harness/oracle.hpp"
#include "hattn/perf_model.hpp"

namespace hattn::harness {

namespace {

constexpr double kMassTolerance = 1e-6;

const char* mode_name(StepMode m) { return m == StepMode::kDecode ? "decode" : "append"; }

std::string num(double x) { return fmt::format("{:.9g}", x); }

double percentile(std::vector<double> v, double p) {
    if (v.empty()) {
        return 0.0;
    }
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

class Collector {
public:
    Collector(const HarnessConfig& config, MetricsReport& report)
        : config_(config), report_(report), scale_(config.engine.model.head_shape().scale) {
        for (std::size_t l = 0; l < config.engine.model.layers; ++l) {
            history_.emplace_back(config.engine.model.heads, config.engine.model.head_dim);
        }
    }

    void observe(std::size_t record, std::size_t layer, const StepInput& in, const StepOutput& out) {
        History& hist = history_.at(layer);
        hist.append(in.kv_in.keys, in.kv_in.values);
        const std::size_t n = hist.size();
        const std::size_t heads = config_.engine.model.heads;
        const std::size_t n_q = in.num_queries();

        StepMetrics step;
        step.record = record;
        step.layer = layer;
        step.mode = in.mode;
        step.n_q = n_q;
        step.window = out.window_positions.size();
        step.archive = out.archive_size;
        step.task_count = out.task_count;
        step.retained_min = 1.0;

        std::vector<char> attended(n);
        for (std::size_t h = 0; h < heads; ++h) {
            std::fill(attended.begin(), attended.end(), 0);
            for (auto p : out.window_positions) {
                attended.at(static_cast<std::size_t>(p)) = 1;
            }
            for (auto p : out.store_positions[h]) {
                attended.at(static_cast<std::size_t>(p)) = 1;
            }
            const bool nodrop = std::all_of(attended.begin(), attended.end(), [](char a) { return a != 0; });

            const OracleResult oracle = full_attention_oracle(in.q[h].cast<double>(), hist.keys(h), hist.values(h), scale_);
            const auto& vmax = hist.max_abs_value(h);
            const Matrix<float>& o = out.merged.heads[h].output;

            HeadMetrics m;
            m.record = record;
            m.layer = layer;
            m.head = h;
            m.mode = in.mode;
            m.n_q = n_q;
            m.window = step.window;
            m.archive = out.archive_size;
            m.context = out.context_sizes.at(h);
            m.attended_store = out.store_positions[h].size();
            m.retained = 1.0;
            m.bound_margin = INFINITY;
            double err_sum = 0.0;
            for (std::size_t i = 0; i < n_q; ++i) {
                double eps = 0.0;
                double kept = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    (attended[j] != 0 ? kept : eps) += oracle.weights(i, j);
                }
                if (std::abs(kept + eps - 1.0) > kMassTolerance) {
                    m.mass_ok = false;
                }
                m.eps = std::max(m.eps, eps);
                m.eps_mean += eps / static_cast<double>(n_q);
                m.retained = std::min(m.retained, kept);
                for (std::size_t c = 0; c < o.cols(); ++c) {
                    const double err = std::abs(static_cast<double>(o(i, c)) - oracle.output(i, c));
                    m.max_err = std::max(m.max_err, err);
                    err_sum += err;
                    const double limit = 2.0 * eps * vmax[c] + config_.bound_tolerance;
                    m.bound_margin = std::min(m.bound_margin, limit - err);
                }
            }
            m.mean_err = err_sum / static_cast<double>(n_q * o.cols());
            m.bound = 2.0 * m.eps * *std::max_element(vmax.begin(), vmax.end()) + config_.bound_tolerance;
            m.bound_ok = m.bound_margin >= 0.0;

            Summary& s = report_.summary;
            s.bound_violations += m.bound_ok ? 0 : 1;
            s.mass_violations += m.mass_ok ? 0 : 1;
            if (nodrop) {
                s.nodrop_max_err = std::max(s.nodrop_max_err, m.max_err);
                s.nodrop_violations += m.max_err <= config_.tolerance ? 0 : 1;
            }
            step.max_err = std::max(step.max_err, m.max_err);
            step.eps_mean += m.eps_mean / static_cast<double>(heads);
            step.eps_max = std::max(step.eps_max, m.eps);
            step.retained_min = std::min(step.retained_min, m.retained);
            step.mean_attended_store += static_cast<double>(m.attended_store) / static_cast<double>(heads);
            report_.heads.push_back(m);
        }

        perf::WorkloadShape shape;
        shape.batch = config_.engine.batch;
        shape.heads = heads;
        shape.head_dim = config_.engine.model.head_dim;
        shape.n_q = n_q;
        shape.n_window = step.window - n_q;
        shape.n_store = step.archive;
        shape.n_selected = std::min<std::size_t>(step.archive, std::llround(step.mean_attended_store));
        shape.bytes_per_elem = config_.perf.shape.bytes_per_elem;
        const auto& specs = config_.perf.specs;
        step.t_baseline = perf::time_offload_baseline(shape, specs.gpu, specs.link).total();
        step.t_hybrid = perf::time_hybrid(shape, specs.gpu, specs.cpu, specs.link, specs.core_efficiency).total();
        report_.summary.t_baseline += step.t_baseline;
        report_.summary.t_hybrid += step.t_hybrid;
        report_.steps.push_back(step);
    }

private:
    const HarnessConfig& config_;
    MetricsReport& report_;
    double scale_;
    std::vector<History> history_;
};

void finish_summary(MetricsReport& r, std::size_t records) {
    Summary& s = r.summary;
    s.records = records;
    s.rows = r.heads.size();
    if (r.heads.empty()) {
        return;
    }
    std::vector<double> eps;
    eps.reserve(r.heads.size());
    double fraction_sum = 0.0;
    std::size_t fraction_rows = 0;
    s.retained_min = 1.0;
    for (const HeadMetrics& m : r.heads) {
        s.max_err = std::max(s.max_err, m.max_err);
        s.mean_err += m.mean_err;
        s.eps_mean += m.eps_mean;
        s.retained_mean += m.retained;
        s.retained_min = std::min(s.retained_min, m.retained);
        eps.push_back(m.eps);
        if (m.mode == StepMode::kDecode && m.archive > 0) {
            fraction_sum += static_cast<double>(m.context) / static_cast<double>(m.archive);
            ++fraction_rows;
        }
    }
    const auto rows = static_cast<double>(r.heads.size());
    s.mean_err /= rows;
    s.eps_mean /= rows;
    s.retained_mean /= rows;
    s.context_fraction = fraction_rows == 0 ? 0.0 : fraction_sum / static_cast<double>(fraction_rows);
    s.eps_p50 = percentile(eps, 0.50);
    s.eps_p90 = percentile(eps, 0.90);
    s.eps_p99 = percentile(eps, 0.99);
    s.eps_max = *std::max_element(eps.begin(), eps.end());
}

}  // namespace

WorkloadSpec effective_workload(const HarnessConfig& config) {
    WorkloadSpec spec = config.workload;
    if (spec.max_append == 0) {
        spec.max_append = config.engine.cache.capacity() - config.engine.cache.blk_size;
    }
    return spec;
}

MetricsReport run_experiment(const HarnessConfig& config, const Workload& workload, std::string* final_dump) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    MetricsReport report;
    Collector collector(config, report);
    const SequenceResult result = run_sequence(
        config.engine, workload,
        [&](std::size_t record, std::size_t layer, const StepInput& in, const StepOutput& out) {
            collector.observe(record, layer, in, out);
        },
        false);
    if (final_dump != nullptr) {
        final_dump->clear();
        for (std::size_t l = 0; l < result.engine->num_layers(); ++l) {
            *final_dump += dump_window(result.engine->window(l));
            *final_dump += dump_context(l, result.engine->store(l));
        }
    }
    finish_summary(report, workload.steps.size());
    report.summary.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

MetricsReport run_experiment(const HarnessConfig& config) {
    config.validate();
    return run_experiment(config, gen_workload(effective_workload(config), config.engine.model));
}

std::string heads_csv(const MetricsReport& report) {
    std::string out =
        "record,layer,head,mode,n_q,window,archive,context,attended_store,max_err,mean_err,eps,eps_mean,retained,"
        "bound,bound_margin,bound_ok,mass_ok\n";
    for (const HeadMetrics& m : report.heads) {
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", m.record, m.layer, m.head,
                           mode_name(m.mode), m.n_q, m.window, m.archive, m.context, m.attended_store, num(m.max_err),
                           num(m.mean_err), num(m.eps), num(m.eps_mean), num(m.retained), num(m.bound),
                           num(m.bound_margin), m.bound_ok ? 1 : 0, m.mass_ok ? 1 : 0);
    }
    return out;
}

std::string steps_csv(const MetricsReport& report) {
    std::string out =
        "record,layer,mode,n_q,window,archive,mean_attended_store,max_err,eps_mean,eps_max,retained_min,task_count,"
        "t_baseline,t_hybrid\n";
    for (const StepMetrics& s : report.steps) {
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", s.record, s.layer, mode_name(s.mode), s.n_q,
                           s.window, s.archive, num(s.mean_attended_store), num(s.max_err), num(s.eps_mean),
                           num(s.eps_max), num(s.retained_min), s.task_count, num(s.t_baseline), num(s.t_hybrid));
    }
    return out;
}

std::string summary_header() {
    return "records,rows,max_err,mean_err,eps_mean,eps_p50,eps_p90,eps_p99,eps_max,retained_mean,retained_min,"
           "context_fraction,nodrop_max_err,bound_violations,mass_violations,nodrop_violations,t_baseline,t_hybrid,"
           "wall_seconds";
}

std::string summary_row(const Summary& s, bool with_wall_clock) {
    return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}", s.records, s.rows, num(s.max_err),
                       num(s.mean_err), num(s.eps_mean), num(s.eps_p50), num(s.eps_p90), num(s.eps_p99),
                       num(s.eps_max), num(s.retained_mean), num(s.retained_min), num(s.context_fraction),
                       num(s.nodrop_max_err), s.bound_violations, s.mass_violations, s.nodrop_violations,
                       num(s.t_baseline), num(s.t_hybrid), with_wall_clock ? num(s.wall_seconds) : "");
}

std::string summary_csv(const MetricsReport& report) {
    return summary_header() + "\n" + summary_row(report.summary) + "\n";
}

std::string report_text(const MetricsReport& report, const HarnessConfig& config) {
    const Summary& s = report.summary;
    const auto& m = config.engine.model;
    const auto& c = config.engine.cache;
    std::string out;
    out += fmt::format("model      {} layers x {} heads x d={}\n", m.layers, m.heads, m.head_dim);
    out += fmt::format("window     {} blocks x {} = {} entries, alpha {}, beta {}\n", c.blk_num, c.blk_size,
                       c.capacity(), c.alpha, c.beta);
    out += fmt::format("records    {} ({} head rows)\n", s.records, s.rows);
    out += fmt::format("{:<22}{:>14}\n", "metric", "value");
    auto line = [&](const char* name, double v) { out += fmt::format("{:<22}{:>14.6g}\n", name, v); };
    line("max error", s.max_err);
    line("mean error", s.mean_err);
    line("no-drop max error", s.nodrop_max_err);
    line("eps mean", s.eps_mean);
    line("eps p50", s.eps_p50);
    line("eps p90", s.eps_p90);
    line("eps p99", s.eps_p99);
    line("eps max", s.eps_max);
    line("retained mean", s.retained_mean);
    line("retained min", s.retained_min);
    line("context / archive", s.context_fraction);
    line("bound violations", static_cast<double>(s.bound_violations));
    line("mass violations", static_cast<double>(s.mass_violations));
    line("no-drop violations", static_cast<double>(s.nodrop_violations));
    line("sim baseline (s)", s.t_baseline);
    line("sim hybrid (s)", s.t_hybrid);
    line("wall clock (s)", s.wall_seconds);
    return out;
}

void write_text_file(const std::string& path, const std::string& text) {
    const std::filesystem::path p(path);
    std::error_code ec;
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path(), ec);
        if (ec) {
            throw std::runtime_error("cannot create directory " + p.parent_path().string() + ": " + ec.message());
        }
    }
    std::ofstream out(p, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    out << text;
    out.flush();
    if (!out) {
        throw std::runtime_error("write failed for " + path);
    }
}

void write_report(const MetricsReport& report, const std::string& dir) {
    const std::filesystem::path base(dir);
    write_text_file((base / "heads.csv").string(), heads_csv(report));
    write_text_file((base / "steps.csv").string(), steps_csv(report));
    write_text_file((base / "summary.csv").string(), summary_csv(report));
}

HarnessConfig apply_param(HarnessConfig config, const std::string& param, double value) {
    auto& cache = config.engine.cache;
    if (param == "beta") {
        cache.beta = value;
    } else if (param == "window") {
        const auto tokens = static_cast<std::size_t>(std::llround(value));
        HATTN_CHECK(value > 0 && tokens % cache.blk_size == 0, "window must be a positive multiple of blk_size");
        cache.blk_num = tokens / cache.blk_size;
    } else if (param == "window_ratio") {
        HATTN_CHECK(value > 0.0 && value <= 1.0, "window_ratio must lie in (0, 1]");
        const double total = static_cast<double>(config.workload.total_tokens());
        const auto blocks = std::llround(value * total / static_cast<double>(cache.blk_size));
        cache.blk_num = std::max<std::size_t>(2, static_cast<std::size_t>(blocks));
    } else if (param == "batch") {
        HATTN_CHECK(value >= 1.0, "batch must be at least 1");
        config.engine.batch = static_cast<std::size_t>(std::llround(value));
    } else {
        HATTN_CHECK(false, "unknown sweep parameter " + param + " (beta, window, window_ratio, batch)");
    }
    config.validate();
    return config;
}

std::vector<SweepPoint> sweep(const HarnessConfig& config, const std::vector<SweepAxis>& axes) {
    HATTN_CHECK(!axes.empty(), "sweep needs at least one axis");
    for (const auto& a : axes) {
        HATTN_CHECK(!a.values.empty(), "sweep axis " + a.param + " has no values");
    }
    std::vector<SweepPoint> points;
    std::vector<std::size_t> idx(axes.size(), 0);
    while (true) {
        HarnessConfig c = config;
        SweepPoint p;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            p.values.push_back(axes[a].values[idx[a]]);
            c = apply_param(std::move(c), axes[a].param, p.values.back());
        }
        p.summary = run_experiment(c).summary;
        points.push_back(std::move(p));
        std::size_t a = axes.size();
        while (a > 0) {
            --a;
            if (++idx[a] < axes[a].values.size()) {
                break;
            }
            idx[a] = 0;
            if (a == 0) {
                return points;
            }
        }
    }
}

std::string sweep_csv(const std::vector<SweepAxis>& axes, const std::vector<SweepPoint>& points,
                      bool with_wall_clock) {
    std::string out;
    for (const auto& a : axes) {
        out += a.param + ",";
    }
    out += summary_header() + "\n";
    for (const auto& p : points) {
        for (double v : p.values) {
            out += num(v) + ",";
        }
        out += summary_row(p.summary, with_wall_clock) + "\n";
    }
    return out;
}

}  // namespace hattn::harness
