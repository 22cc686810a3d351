// hattn: verification runs, parameter sweeps and cost-model tables.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "hattn/harness/config.hpp"
#include "hattn/harness/experiment.hpp"
#include "hattn/harness/workload.hpp"
#include "hattn/perf_model.hpp"

using namespace hattn;
using namespace hattn::harness;

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    bool report = false;
};

HarnessConfig resolve(const CommonOptions& opt) {
    HarnessConfig c = opt.config_path.empty() ? HarnessConfig{} : load_config(opt.config_path);
    if (opt.seed) {
        c.workload.seed = *opt.seed;
    }
    c.validate();
    return c;
}

std::string out_path(const CommonOptions& opt, const std::string& name) {
    return (std::filesystem::path(opt.out) / name).string();
}

void add_common(CLI::App* cmd, CommonOptions& opt) {
    cmd->add_option("--config", opt.config_path, "INI configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", opt.seed, "workload seed, overrides [run] seed");
    cmd->add_option("--out", opt.out, "output directory")->capture_default_str();
    cmd->add_flag("--report", opt.report, "print a readable summary");
}

int cmd_verify(const CommonOptions& opt, const std::string& workload_path, bool dump) {
    const HarnessConfig config = resolve(opt);
    Workload workload;
    if (workload_path.empty()) {
        workload = gen_workload(effective_workload(config), config.engine.model);
    } else {
        std::ifstream in(workload_path);
        if (!in) {
            throw std::runtime_error("cannot open workload file " + workload_path);
        }
        workload = read_workload(in);
    }
    std::string dump_text;
    const MetricsReport report = run_experiment(config, workload, dump ? &dump_text : nullptr);
    write_report(report, opt.out);
    if (dump) {
        write_text_file(out_path(opt, "cache_dump.txt"), dump_text);
    }
    const std::string text = report_text(report, config);
    if (opt.report) {
        write_text_file(out_path(opt, "report.txt"), text);
        std::cout << text;
    }
    const Summary& s = report.summary;
    const bool ok = s.bound_violations == 0 && s.mass_violations == 0 && s.nodrop_violations == 0;
    std::cout << fmt::format("verify: {} records, max_err {:.3g}, eps_mean {:.3g}, bound violations {}, {}\n",
                             s.records, s.max_err, s.eps_mean, s.bound_violations, ok ? "ok" : "FAILED");
    return ok ? 0 : 1;
}

int cmd_sweep(const CommonOptions& opt, const std::string& param, const std::string& values, const std::string& by,
              const std::string& by_values) {
    const HarnessConfig config = resolve(opt);
    std::vector<SweepAxis> axes{{param, parse_double_list(values)}};
    if (!by.empty()) {
        axes.push_back({by, parse_double_list(by_values)});
    }
    const auto points = sweep(config, axes);
    const std::string csv = sweep_csv(axes, points);
    write_text_file(out_path(opt, "sweep.csv"), csv);
    if (opt.report) {
        std::cout << csv;
    }
    std::size_t violations = 0;
    for (const auto& p : points) {
        violations += p.summary.bound_violations + p.summary.mass_violations + p.summary.nodrop_violations;
    }
    std::cout << fmt::format("sweep: {} runs written to {}\n", points.size(), out_path(opt, "sweep.csv"));
    return violations == 0 ? 0 : 1;
}

int cmd_heatmap(const CommonOptions& opt) {
    const HarnessConfig config = resolve(opt);
    const auto cells =
        perf::speedup_heatmap(config.perf.windows, config.perf.stores, config.perf.batches, config.perf.shape,
                              config.perf.specs);
    const std::string csv = perf::heatmap_csv(cells);
    write_text_file(out_path(opt, "heatmap.csv"), csv);
    if (opt.report) {
        for (const auto& c : cells) {
            std::cout << fmt::format("batch {:>3} window {:>6} store {:>7}  speedup {:8.3f}\n", c.batch, c.n_window,
                                     c.n_store, c.speedup);
        }
    }
    std::cout << fmt::format("heatmap: {} cells written to {}\n", cells.size(), out_path(opt, "heatmap.csv"));
    return 0;
}

int cmd_breakdown(const CommonOptions& opt) {
    const HarnessConfig config = resolve(opt);
    const auto cells = perf::speedup_heatmap({config.perf.breakdown_window}, config.perf.breakdown_stores,
                                             {config.perf.breakdown_batch}, config.perf.shape, config.perf.specs);
    const std::string csv = perf::heatmap_csv(cells);
    write_text_file(out_path(opt, "breakdown.csv"), csv);
    if (opt.report) {
        std::cout << fmt::format("{:>8} {:>12} {:>12} {:>12} {:>12} {:>12} {:>8}\n", "n_store", "transfer_ms",
                                 "compute_ms", "gpu_ms", "cpu_ms", "merge_ms", "speedup");
        for (const auto& c : cells) {
            std::cout << fmt::format("{:>8} {:>12.4f} {:>12.4f} {:>12.4f} {:>12.4f} {:>12.4f} {:>8.2f}\n", c.n_store,
                                     1e3 * c.baseline.transfer, 1e3 * c.baseline.compute, 1e3 * c.hybrid.gpu_part,
                                     1e3 * c.hybrid.cpu_part, 1e3 * c.hybrid.merge, c.speedup);
        }
    }
    std::cout << fmt::format("breakdown: {} rows written to {}\n", cells.size(), out_path(opt, "breakdown.csv"));
    return 0;
}

int cmd_gen(const CommonOptions& opt) {
    const HarnessConfig config = resolve(opt);
    const Workload w = gen_workload(effective_workload(config), config.engine.model);
    const std::string path = out_path(opt, "workload.txt");
    std::filesystem::create_directories(opt.out);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    write_workload(out, w);
    if (!out) {
        throw std::runtime_error("write failed for " + path);
    }
    if (opt.report) {
        std::cout << format_config(config);
    }
    std::cout << fmt::format("gen: {} records written to {}\n", w.steps.size(), path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid window/store attention: verification, sweeps and cost model"};
    app.require_subcommand(1);

    CommonOptions opt;
    std::string workload_path;
    bool dump = false;
    auto* verify = app.add_subcommand("verify", "run the engine against the 64-bit oracle");
    add_common(verify, opt);
    verify->add_option("--workload", workload_path, "workload file from `gen` instead of a generated stream");
    verify->add_flag("--dump", dump, "write final window/context dumps to cache_dump.txt");

    std::string param;
    std::string values;
    std::string by;
    std::string by_values;
    auto* sweep_cmd = app.add_subcommand("sweep", "one verification run per parameter value");
    add_common(sweep_cmd, opt);
    sweep_cmd->add_option("--param", param, "beta | window | window_ratio | batch")->required();
    sweep_cmd->add_option("--values", values, "comma separated values")->required();
    sweep_cmd->add_option("--by", by, "optional second parameter (grid)");
    sweep_cmd->add_option("--by-values", by_values, "values of the second parameter");

    auto* heatmap = app.add_subcommand("heatmap", "cost-model speedup grid");
    add_common(heatmap, opt);
    auto* breakdown = app.add_subcommand("breakdown", "cost-model time breakdown over store size");
    add_common(breakdown, opt);
    auto* gen = app.add_subcommand("gen", "write the synthetic workload to <out>/workload.txt");
    add_common(gen, opt);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*verify) {
            return cmd_verify(opt, workload_path, dump);
        }
        if (*sweep_cmd) {
            if (!by.empty() && by_values.empty()) {
                throw std::runtime_error("--by needs --by-values");
            }
            return cmd_sweep(opt, param, values, by, by_values);
        }
        if (*heatmap) {
            return cmd_heatmap(opt);
        }
        if (*breakdown) {
            return cmd_breakdown(opt);
        }
        if (*gen) {
            return cmd_gen(opt);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
