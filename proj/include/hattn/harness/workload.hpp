#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "hattn/hybrid_engine.hpp"

namespace hattn::harness {

struct AppendEvent {
    std::size_t step = 0;    // decode step before which the append is issued
    std::size_t length = 0;  // appended tokens
};

// Synthetic attention-skew generator. Scores of ordinary tokens fall off
// geometrically with age (factor recency_decay per token). Sinks and heavy
// hitters keep a fixed weight relative to the newest token (sink_boost and
// heavy_hitter_boost) for as long as their topic is active. Every append
// event switches the active topic, so heavy hitters of the next topic wake
// up and the previous topic's go dormant.
struct WorkloadSpec {
    std::uint64_t seed = 42;
    std::size_t steps = 2048;
    std::size_t prefill_len = 64;
    std::vector<AppendEvent> append_events;
    std::size_t sink_count = 4;
    double sink_boost = 4.0;
    std::size_t heavy_hitter_count = 16;
    double heavy_hitter_boost = 2.0;
    double recency_decay = 0.99;
    double noise_scale = 0.01;
    double dormant_gap = 8.0;     // log-weight drop of an inactive topic
    std::size_t max_append = 0;   // chunk length cap for prefill/append records; 0 = no cap

    void validate() const;
    std::size_t total_tokens() const;
};

// Per-step Q/KV stream, deterministic in spec.seed.
Workload gen_workload(const WorkloadSpec& spec, const ModelShape& shape);

// Heavy-hitter positions of one head, with their topic.
struct PlantedToken {
    std::int64_t position = 0;
    std::size_t topic = 0;
    bool sink = false;
};
std::vector<PlantedToken> planted_tokens(const WorkloadSpec& spec, const ModelShape& shape, std::size_t layer,
                                         std::size_t head);

// Text workload format. Header line, then per record a "step" line followed
// by q/k/v lines per layer and head. Each value is its IEEE-754 binary32
// bit pattern as 8 lowercase hex digits, most significant first; rows are
// concatenated in order:
//   hattn-workload 1 layers=<L> heads=<H> head_dim=<D> records=<R>
//   step <index> <decode|append> <first_position> <count>
//   <layer> <head> q|k|v <hex digits, 8 per value, count*head_dim values>
void write_workload(std::ostream& out, const Workload& workload);
Workload read_workload(std::istream& in);

}  // namespace hattn::harness
