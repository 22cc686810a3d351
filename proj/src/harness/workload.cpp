#include "hattn/harness/workload.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <fmt/format.h>

namespace hattn::harness {

void WorkloadSpec::validate() const {
    HATTN_CHECK(recency_decay > 0.0 && recency_decay < 1.0, "recency_decay must lie in (0, 1)");
    HATTN_CHECK(noise_scale >= 0.0, "noise_scale must be non-negative");
    HATTN_CHECK(sink_boost >= 0.0 && heavy_hitter_boost >= 0.0, "boosts must be non-negative");
    HATTN_CHECK(dormant_gap >= 0.0, "dormant_gap must be non-negative");
    for (const auto& e : append_events) {
        HATTN_CHECK(e.step <= steps, "append event past the last decode step");
        HATTN_CHECK(e.length >= 1, "append events need at least one token");
    }
}

std::size_t WorkloadSpec::total_tokens() const {
    std::size_t n = prefill_len + steps;
    for (const auto& e : append_events) {
        n += e.length;
    }
    return n;
}

namespace {

struct RecordPlan {
    StepMode mode;
    std::int64_t first;
    std::size_t count;
    std::size_t topic;
};

std::vector<RecordPlan> plan_records(const WorkloadSpec& spec) {
    std::vector<RecordPlan> plan;
    std::int64_t pos = 0;
    std::size_t topic = 0;
    const std::size_t cap = spec.max_append == 0 ? std::numeric_limits<std::size_t>::max() : spec.max_append;
    auto push_append = [&](std::size_t length) {
        while (length > 0) {
            const std::size_t n = std::min(length, cap);
            plan.push_back({StepMode::kAppend, pos, n, topic});
            pos += static_cast<std::int64_t>(n);
            length -= n;
        }
    };
    push_append(spec.prefill_len);
    auto events = spec.append_events;
    std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
    std::size_t next_event = 0;
    for (std::size_t step = 0; step <= spec.steps; ++step) {
        while (next_event < events.size() && events[next_event].step == step) {
            ++topic;
            push_append(events[next_event].length);
            ++next_event;
        }
        if (step < spec.steps) {
            plan.push_back({StepMode::kDecode, pos, 1, topic});
            ++pos;
        }
    }
    return plan;
}

std::uint64_t mix_seed(std::uint64_t seed, std::size_t layer, std::size_t head, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(layer), static_cast<std::uint32_t>(head),
                      static_cast<std::uint32_t>(stream)};
    std::uint64_t out[1];
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return out[0];
}

// Generation state of one (layer, head).
struct HeadGenerator {
    std::size_t d = 0;
    double gamma = 0.0;        // per-token log-weight decay
    double center = 0.0;       // position where recency scores cross zero
    double inv_sqrt_scale = 1.0;
    std::size_t axis_recency = 0;
    std::size_t axis_bias = 0;
    std::size_t axis_sink = 0;
    std::vector<std::size_t> axis_topic;
    std::map<std::int64_t, std::pair<std::size_t, double>> planted;  // position -> (axis, log boost)
    std::map<std::int64_t, PlantedToken> planted_info;
    std::mt19937_64 tokens;

    double recency(double position) const { return gamma * (position - center); }
};

HeadGenerator make_generator(const WorkloadSpec& spec, const ModelShape& shape, std::size_t layer, std::size_t head) {
    const std::size_t d = shape.head_dim;
    HATTN_CHECK(d >= 4, "the skew generator needs head_dim >= 4");
    std::mt19937_64 rng(mix_seed(spec.seed, layer, head, 1));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    HeadGenerator g;
    g.d = d;
    g.inv_sqrt_scale = 1.0 / std::sqrt(shape.head_shape().scale);
    g.center = 0.5 * static_cast<double>(spec.total_tokens());
    g.gamma = -std::log(spec.recency_decay) * (0.6 + 0.8 * unit(rng));

    std::vector<std::size_t> axes(d);
    std::iota(axes.begin(), axes.end(), 0);
    std::shuffle(axes.begin(), axes.end(), rng);
    g.axis_recency = axes[0];
    g.axis_bias = axes[1];
    g.axis_sink = axes[2];
    const std::size_t topics = std::min(spec.append_events.size() + 1, d - 3);
    g.axis_topic.assign(axes.begin() + 3, axes.begin() + 3 + static_cast<std::ptrdiff_t>(topics));

    const auto total = static_cast<std::int64_t>(spec.total_tokens());
    if (spec.sink_boost > 0.0) {
        for (std::size_t i = 0; i < spec.sink_count && static_cast<std::int64_t>(i) < total; ++i) {
            const auto p = static_cast<std::int64_t>(i);
            g.planted[p] = {g.axis_sink, std::log(spec.sink_boost)};
            g.planted_info[p] = {p, 0, true};
        }
    }
    if (spec.heavy_hitter_boost > 0.0 && spec.heavy_hitter_count > 0) {
        const auto lo = static_cast<std::int64_t>(spec.sink_count);
        const std::int64_t hi = std::max(lo + 1, total / 2);
        std::uniform_int_distribution<std::int64_t> pick(lo, hi - 1);
        std::size_t placed = 0;
        std::size_t attempts = 0;
        while (placed < spec.heavy_hitter_count && attempts < 100 * spec.heavy_hitter_count) {
            ++attempts;
            const std::int64_t p = pick(rng);
            if (p >= total || g.planted.count(p) != 0) {
                continue;
            }
            const std::size_t topic = placed % topics;
            const double boost = spec.heavy_hitter_boost * (0.5 + unit(rng));
            g.planted[p] = {g.axis_topic[topic], std::log(boost)};
            g.planted_info[p] = {p, topic, false};
            ++placed;
        }
    }
    g.tokens.seed(mix_seed(spec.seed, layer, head, 2));
    return g;
}

void fill_query(const HeadGenerator& g, const WorkloadSpec& spec, double position, std::size_t topic,
                std::span<float> q) {
    std::vector<double> qh(g.d, 0.0);
    const double c = g.recency(position);
    qh[g.axis_recency] = 1.0;
    qh[g.axis_bias] = 1.0;
    qh[g.axis_sink] = c;
    const std::size_t active = topic % g.axis_topic.size();
    for (std::size_t k = 0; k < g.axis_topic.size(); ++k) {
        qh[g.axis_topic[k]] = k == active ? c : c - spec.dormant_gap;
    }
    for (std::size_t i = 0; i < g.d; ++i) {
        q[i] = static_cast<float>(qh[i] * g.inv_sqrt_scale);
    }
}

void fill_token(HeadGenerator& g, const WorkloadSpec& spec, std::int64_t position, std::span<float> k,
                std::span<float> v) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> kh(g.d, 0.0);
    const auto it = g.planted.find(position);
    if (it != g.planted.end()) {
        kh[it->second.first] = 1.0;
        kh[g.axis_bias] = it->second.second;
    } else {
        kh[g.axis_recency] = g.recency(static_cast<double>(position));
    }
    for (std::size_t i = 0; i < g.d; ++i) {
        const double noise = spec.noise_scale * normal(g.tokens);
        k[i] = static_cast<float>((kh[i] + noise) * g.inv_sqrt_scale);
    }
    for (std::size_t i = 0; i < g.d; ++i) {
        v[i] = static_cast<float>(normal(g.tokens));
    }
}

}  // namespace

std::vector<PlantedToken> planted_tokens(const WorkloadSpec& spec, const ModelShape& shape, std::size_t layer,
                                         std::size_t head) {
    spec.validate();
    const HeadGenerator g = make_generator(spec, shape, layer, head);
    std::vector<PlantedToken> out;
    for (const auto& [p, info] : g.planted_info) {
        out.push_back(info);
    }
    return out;
}

Workload gen_workload(const WorkloadSpec& spec, const ModelShape& shape) {
    spec.validate();
    shape.validate();
    const std::size_t layers = shape.layers;
    const std::size_t heads = shape.heads;
    const std::size_t d = shape.head_dim;

    std::vector<HeadGenerator> gens;
    gens.reserve(layers * heads);
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t h = 0; h < heads; ++h) {
            gens.push_back(make_generator(spec, shape, l, h));
        }
    }

    Workload w;
    w.layers = layers;
    w.heads = heads;
    w.head_dim = d;
    for (const RecordPlan& rec : plan_records(spec)) {
        std::vector<StepInput> per_layer(layers);
        for (std::size_t l = 0; l < layers; ++l) {
            StepInput& in = per_layer[l];
            in.mode = rec.mode;
            in.kv_in.first_position = rec.first;
            in.q.assign(heads, Matrix<float>(rec.count, d));
            in.kv_in.keys.assign(heads, Matrix<float>(rec.count, d));
            in.kv_in.values.assign(heads, Matrix<float>(rec.count, d));
            for (std::size_t h = 0; h < heads; ++h) {
                HeadGenerator& g = gens[l * heads + h];
                for (std::size_t i = 0; i < rec.count; ++i) {
                    const std::int64_t p = rec.first + static_cast<std::int64_t>(i);
                    fill_query(g, spec, static_cast<double>(p), rec.topic, in.q[h].row(i));
                    fill_token(g, spec, p, in.kv_in.keys[h].row(i), in.kv_in.values[h].row(i));
                }
            }
        }
        w.steps.push_back(std::move(per_layer));
    }
    return w;
}

namespace {

void write_hex_rows(std::ostream& out, const Matrix<float>& m) {
    std::string line;
    line.reserve(m.flat().size() * 8);
    for (float x : m.flat()) {
        line += fmt::format("{:08x}", std::bit_cast<std::uint32_t>(x));
    }
    out << line;
}

Matrix<float> parse_hex_rows(const std::string& hex, std::size_t rows, std::size_t cols) {
    HATTN_CHECK(hex.size() == rows * cols * 8, "hex payload length does not match the record shape");
    Matrix<float> m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(std::stoul(hex.substr(i * 8, 8), nullptr, 16));
        m.flat()[i] = std::bit_cast<float>(bits);
    }
    return m;
}

std::size_t header_field(const std::string& token, const std::string& key) {
    HATTN_CHECK(token.rfind(key + "=", 0) == 0, "malformed workload header: expected " + key);
    return static_cast<std::size_t>(std::stoull(token.substr(key.size() + 1)));
}

}  // namespace

void write_workload(std::ostream& out, const Workload& workload) {
    out << fmt::format("hattn-workload 1 layers={} heads={} head_dim={} records={}\n", workload.layers, workload.heads,
                       workload.head_dim, workload.steps.size());
    for (std::size_t r = 0; r < workload.steps.size(); ++r) {
        const auto& rec = workload.steps[r];
        HATTN_CHECK(rec.size() == workload.layers, "record layer count mismatch");
        const StepInput& first = rec.front();
        out << fmt::format("step {} {} {} {}\n", r, first.mode == StepMode::kDecode ? "decode" : "append",
                           first.kv_in.first_position, first.num_queries());
        for (std::size_t l = 0; l < workload.layers; ++l) {
            for (std::size_t h = 0; h < workload.heads; ++h) {
                const char* names[] = {"q", "k", "v"};
                const Matrix<float>* mats[] = {&rec[l].q[h], &rec[l].kv_in.keys[h], &rec[l].kv_in.values[h]};
                for (int i = 0; i < 3; ++i) {
                    out << l << ' ' << h << ' ' << names[i] << ' ';
                    write_hex_rows(out, *mats[i]);
                    out << '\n';
                }
            }
        }
    }
}

Workload read_workload(std::istream& in) {
    std::string line;
    HATTN_CHECK(static_cast<bool>(std::getline(in, line)), "empty workload stream");
    std::istringstream header(line);
    std::string magic, version, t_layers, t_heads, t_dim, t_records;
    header >> magic >> version >> t_layers >> t_heads >> t_dim >> t_records;
    HATTN_CHECK(magic == "hattn-workload" && version == "1", "not a version-1 workload file");
    Workload w;
    w.layers = header_field(t_layers, "layers");
    w.heads = header_field(t_heads, "heads");
    w.head_dim = header_field(t_dim, "head_dim");
    const std::size_t records = header_field(t_records, "records");
    w.steps.reserve(records);
    for (std::size_t r = 0; r < records; ++r) {
        HATTN_CHECK(static_cast<bool>(std::getline(in, line)), "workload truncated before record " + std::to_string(r));
        std::istringstream rec_line(line);
        std::string tag, mode;
        std::size_t index = 0, count = 0;
        std::int64_t first = 0;
        rec_line >> tag >> index >> mode >> first >> count;
        HATTN_CHECK(tag == "step" && index == r && (mode == "decode" || mode == "append"), "malformed step line");
        std::vector<StepInput> per_layer(w.layers);
        for (auto& s : per_layer) {
            s.mode = mode == "decode" ? StepMode::kDecode : StepMode::kAppend;
            s.kv_in.first_position = first;
            s.q.resize(w.heads);
            s.kv_in.keys.resize(w.heads);
            s.kv_in.values.resize(w.heads);
        }
        for (std::size_t i = 0; i < w.layers * w.heads * 3; ++i) {
            HATTN_CHECK(static_cast<bool>(std::getline(in, line)), "workload truncated inside record");
            std::istringstream row(line);
            std::size_t l = 0, h = 0;
            std::string which, hex;
            row >> l >> h >> which >> hex;
            HATTN_CHECK(l < w.layers && h < w.heads, "tensor line indexes outside the declared shape");
            Matrix<float> m = parse_hex_rows(hex, count, w.head_dim);
            if (which == "q") {
                per_layer[l].q[h] = std::move(m);
            } else if (which == "k") {
                per_layer[l].kv_in.keys[h] = std::move(m);
            } else if (which == "v") {
                per_layer[l].kv_in.values[h] = std::move(m);
            } else {
                HATTN_CHECK(false, "unknown tensor tag " + which);
            }
        }
        w.steps.push_back(std::move(per_layer));
    }
    return w;
}

}  // namespace hattn::harness
