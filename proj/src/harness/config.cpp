#include "hattn/harness/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace hattn::harness {

namespace pt = boost::property_tree;

HarnessConfig::HarnessConfig() {
    engine.model.layers = 2;
    engine.model.heads = 8;
    engine.model.head_dim = 64;
    engine.cache.blk_size = 32;
    engine.cache.blk_num = 8;
    perf.shape.heads = 32;
    perf.shape.head_dim = 128;
    perf.shape.bytes_per_elem = 2;
}

void HarnessConfig::validate() const {
    engine.validate();
    workload.validate();
    perf.specs.gpu.validate();
    perf.specs.cpu.validate();
    perf.specs.link.validate();
    HATTN_CHECK(perf.specs.core_efficiency > 0.0 && perf.specs.core_efficiency <= 1.0,
                "core_efficiency must lie in (0, 1]");
    HATTN_CHECK(perf.specs.retention_fraction >= 0.0 && perf.specs.retention_fraction <= 1.0,
                "retention_fraction must lie in [0, 1]");
    HATTN_CHECK(tolerance > 0.0 && bound_tolerance >= 0.0, "tolerances must be positive");
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
    std::vector<std::string> parts;
    boost::split(parts, text, boost::is_any_of(","));
    std::vector<std::size_t> out;
    for (auto& p : parts) {
        boost::trim(p);
        if (!p.empty()) {
            out.push_back(static_cast<std::size_t>(std::stoull(p)));
        }
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<std::string> parts;
    boost::split(parts, text, boost::is_any_of(","));
    std::vector<double> out;
    for (auto& p : parts) {
        boost::trim(p);
        if (!p.empty()) {
            out.push_back(std::stod(p));
        }
    }
    return out;
}

namespace {

std::vector<AppendEvent> parse_events(const std::string& text) {
    std::vector<std::string> parts;
    boost::split(parts, text, boost::is_any_of(","));
    std::vector<AppendEvent> out;
    for (auto& p : parts) {
        boost::trim(p);
        if (p.empty()) {
            continue;
        }
        const auto colon = p.find(':');
        HATTN_CHECK(colon != std::string::npos, "append event must read step:length, got " + p);
        out.push_back({static_cast<std::size_t>(std::stoull(p.substr(0, colon))),
                       static_cast<std::size_t>(std::stoull(p.substr(colon + 1)))});
    }
    return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
    return fmt::format("{}", fmt::join(v, ","));
}

// Binds every recognised key to a setter so unknown keys can be rejected.
using Setter = std::function<void(HarnessConfig&, const std::string&)>;

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(std::stoull(v)); }

const std::map<std::string, std::map<std::string, Setter>>& setters() {
    static const std::map<std::string, std::map<std::string, Setter>> table = {
        {"model",
         {{"layers", [](HarnessConfig& c, const std::string& v) { c.engine.model.layers = to_size(v); }},
          {"heads", [](HarnessConfig& c, const std::string& v) { c.engine.model.heads = to_size(v); }},
          {"head_dim", [](HarnessConfig& c, const std::string& v) { c.engine.model.head_dim = to_size(v); }},
          {"scale", [](HarnessConfig& c, const std::string& v) { c.engine.model.scale = std::stod(v); }}}},
        {"cache",
         {{"blk_num", [](HarnessConfig& c, const std::string& v) { c.engine.cache.blk_num = to_size(v); }},
          {"blk_size", [](HarnessConfig& c, const std::string& v) { c.engine.cache.blk_size = to_size(v); }},
          {"alpha", [](HarnessConfig& c, const std::string& v) { c.engine.cache.alpha = std::stod(v); }},
          {"beta", [](HarnessConfig& c, const std::string& v) { c.engine.cache.beta = std::stod(v); }}}},
        {"engine",
         {{"core_count", [](HarnessConfig& c, const std::string& v) { c.engine.core_count = to_size(v); }},
          {"batch", [](HarnessConfig& c, const std::string& v) { c.engine.batch = to_size(v); }},
          {"threads", [](HarnessConfig& c, const std::string& v) { c.engine.threads = to_size(v); }},
          {"padding",
           [](HarnessConfig& c, const std::string& v) {
               HATTN_CHECK(v == "attend" || v == "none", "padding must be attend or none");
               c.engine.padding = v == "attend" ? PaddingMode::kAttend : PaddingMode::kNone;
           }}}},
        {"run",
         {{"seed", [](HarnessConfig& c, const std::string& v) { c.workload.seed = std::stoull(v); }},
          {"tolerance", [](HarnessConfig& c, const std::string& v) { c.tolerance = std::stod(v); }},
          {"bound_tolerance", [](HarnessConfig& c, const std::string& v) { c.bound_tolerance = std::stod(v); }}}},
        {"workload",
         {{"steps", [](HarnessConfig& c, const std::string& v) { c.workload.steps = to_size(v); }},
          {"prefill_len", [](HarnessConfig& c, const std::string& v) { c.workload.prefill_len = to_size(v); }},
          {"append_events", [](HarnessConfig& c, const std::string& v) { c.workload.append_events = parse_events(v); }},
          {"sink_count", [](HarnessConfig& c, const std::string& v) { c.workload.sink_count = to_size(v); }},
          {"sink_boost", [](HarnessConfig& c, const std::string& v) { c.workload.sink_boost = std::stod(v); }},
          {"heavy_hitter_count",
           [](HarnessConfig& c, const std::string& v) { c.workload.heavy_hitter_count = to_size(v); }},
          {"heavy_hitter_boost",
           [](HarnessConfig& c, const std::string& v) { c.workload.heavy_hitter_boost = std::stod(v); }},
          {"recency_decay", [](HarnessConfig& c, const std::string& v) { c.workload.recency_decay = std::stod(v); }},
          {"noise_scale", [](HarnessConfig& c, const std::string& v) { c.workload.noise_scale = std::stod(v); }},
          {"dormant_gap", [](HarnessConfig& c, const std::string& v) { c.workload.dormant_gap = std::stod(v); }},
          {"max_append", [](HarnessConfig& c, const std::string& v) { c.workload.max_append = to_size(v); }}}},
        {"gpu",
         {{"name", [](HarnessConfig& c, const std::string& v) { c.perf.specs.gpu.name = v; }},
          {"peak_flops", [](HarnessConfig& c, const std::string& v) { c.perf.specs.gpu.peak_flops = std::stod(v); }},
          {"mem_bw", [](HarnessConfig& c, const std::string& v) { c.perf.specs.gpu.mem_bw = std::stod(v); }}}},
        {"cpu",
         {{"name", [](HarnessConfig& c, const std::string& v) { c.perf.specs.cpu.name = v; }},
          {"peak_flops", [](HarnessConfig& c, const std::string& v) { c.perf.specs.cpu.peak_flops = std::stod(v); }},
          {"mem_bw", [](HarnessConfig& c, const std::string& v) { c.perf.specs.cpu.mem_bw = std::stod(v); }}}},
        {"link",
         {{"bw", [](HarnessConfig& c, const std::string& v) { c.perf.specs.link.bw = std::stod(v); }},
          {"latency", [](HarnessConfig& c, const std::string& v) { c.perf.specs.link.latency = std::stod(v); }}}},
        {"perf",
         {{"core_efficiency",
           [](HarnessConfig& c, const std::string& v) { c.perf.specs.core_efficiency = std::stod(v); }},
          {"retention_fraction",
           [](HarnessConfig& c, const std::string& v) { c.perf.specs.retention_fraction = std::stod(v); }},
          {"heads", [](HarnessConfig& c, const std::string& v) { c.perf.shape.heads = to_size(v); }},
          {"head_dim", [](HarnessConfig& c, const std::string& v) { c.perf.shape.head_dim = to_size(v); }},
          {"bytes_per_elem", [](HarnessConfig& c, const std::string& v) { c.perf.shape.bytes_per_elem = to_size(v); }},
          {"windows", [](HarnessConfig& c, const std::string& v) { c.perf.windows = parse_size_list(v); }},
          {"stores", [](HarnessConfig& c, const std::string& v) { c.perf.stores = parse_size_list(v); }},
          {"batches", [](HarnessConfig& c, const std::string& v) { c.perf.batches = parse_size_list(v); }},
          {"breakdown_window", [](HarnessConfig& c, const std::string& v) { c.perf.breakdown_window = to_size(v); }},
          {"breakdown_batch", [](HarnessConfig& c, const std::string& v) { c.perf.breakdown_batch = to_size(v); }},
          {"breakdown_stores",
           [](HarnessConfig& c, const std::string& v) { c.perf.breakdown_stores = parse_size_list(v); }}}},
    };
    return table;
}

}  // namespace

HarnessConfig parse_config(const std::string& text) {
    pt::ptree tree;
    std::istringstream in(text);
    pt::read_ini(in, tree);
    HarnessConfig config;
    const auto& table = setters();
    for (const auto& [section, body] : tree) {
        const auto sec = table.find(section);
        HATTN_CHECK(sec != table.end(), "unknown config section [" + section + "]");
        HATTN_CHECK(!body.empty() || body.data().empty(), "config key outside a section: " + section);
        for (const auto& [key, node] : body) {
            const auto it = sec->second.find(key);
            HATTN_CHECK(it != sec->second.end(), "unknown config key " + section + "." + key);
            std::string value = node.data();
            boost::trim(value);
            try {
                it->second(config, value);
            } catch (const std::invalid_argument&) {
                HATTN_CHECK(false, "bad value for " + section + "." + key + ": " + value);
            } catch (const std::out_of_range&) {
                HATTN_CHECK(false, "value out of range for " + section + "." + key + ": " + value);
            }
        }
    }
    config.validate();
    return config;
}

HarnessConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config file " + path);
    }
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return parse_config(buf.str());
    } catch (const pt::ini_parser_error& e) {
        throw std::runtime_error(path + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

std::string format_config(const HarnessConfig& c) {
    std::string events;
    for (const auto& e : c.workload.append_events) {
        events += fmt::format("{}{}:{}", events.empty() ? "" : ",", e.step, e.length);
    }
    const auto& m = c.engine.model;
    const auto& k = c.engine.cache;
    const auto& w = c.workload;
    const auto& s = c.perf.specs;
    std::string out;
    out += fmt::format("[model]\nlayers = {}\nheads = {}\nhead_dim = {}\nscale = {}\n\n", m.layers, m.heads,
                       m.head_dim, m.scale);
    out += fmt::format("[cache]\nblk_num = {}\nblk_size = {}\nalpha = {}\nbeta = {}\n\n", k.blk_num, k.blk_size,
                       k.alpha, k.beta);
    out += fmt::format("[engine]\ncore_count = {}\nbatch = {}\npadding = {}\nthreads = {}\n\n", c.engine.core_count,
                       c.engine.batch, c.engine.padding == PaddingMode::kAttend ? "attend" : "none",
                       c.engine.threads);
    out += fmt::format("[run]\nseed = {}\ntolerance = {}\nbound_tolerance = {}\n\n", w.seed, c.tolerance,
                       c.bound_tolerance);
    out += fmt::format(
        "[workload]\nsteps = {}\nprefill_len = {}\nappend_events = {}\nsink_count = {}\nsink_boost = {}\n"
        "heavy_hitter_count = {}\nheavy_hitter_boost = {}\nrecency_decay = {}\nnoise_scale = {}\n"
        "dormant_gap = {}\nmax_append = {}\n\n",
        w.steps, w.prefill_len, events, w.sink_count, w.sink_boost, w.heavy_hitter_count, w.heavy_hitter_boost,
        w.recency_decay, w.noise_scale, w.dormant_gap, w.max_append);
    out += fmt::format("[gpu]\nname = {}\npeak_flops = {}\nmem_bw = {}\n\n", s.gpu.name, s.gpu.peak_flops,
                       s.gpu.mem_bw);
    out += fmt::format("[cpu]\nname = {}\npeak_flops = {}\nmem_bw = {}\n\n", s.cpu.name, s.cpu.peak_flops,
                       s.cpu.mem_bw);
    out += fmt::format("[link]\nbw = {}\nlatency = {}\n\n", s.link.bw, s.link.latency);
    out += fmt::format(
        "[perf]\ncore_efficiency = {}\nretention_fraction = {}\nheads = {}\nhead_dim = {}\nbytes_per_elem = {}\n"
        "windows = {}\nstores = {}\nbatches = {}\nbreakdown_window = {}\nbreakdown_batch = {}\n"
        "breakdown_stores = {}\n",
        s.core_efficiency, s.retention_fraction, c.perf.shape.heads, c.perf.shape.head_dim,
        c.perf.shape.bytes_per_elem, join(c.perf.windows), join(c.perf.stores), join(c.perf.batches),
        c.perf.breakdown_window, c.perf.breakdown_batch, join(c.perf.breakdown_stores));
    return out;
}

}  // namespace hattn::harness
