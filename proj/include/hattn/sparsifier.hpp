#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hattn/kv_cache.hpp"
#include "hattn/matrix.hpp"

namespace hattn {

// Archive of one head: entries in position order, plus the salience score of
// each entry (MAW at ingest, full-archive weight after re-evaluation).
struct ArchiveHead {
    Matrix<float> keys;
    Matrix<float> values;
    std::vector<float> salience;
};

// Selected entries of one head, stored contiguously in position order.
// `weights` are the renormalized salience scores (metadata only).
struct HeadContext {
    std::vector<std::size_t> indices;  // into the archive
    Matrix<float> keys;
    Matrix<float> values;
    std::vector<float> weights;

    std::size_t size() const { return indices.size(); }
};

struct ContextCache {
    std::vector<HeadContext> heads;
};

// Store tier of one layer: the growable archive of evicted entries and the
// per-head context cache. The archive has a single writer; the context is
// replaced wholesale so readers always see a complete snapshot.
class StoreTier {
public:
    StoreTier(std::size_t num_heads, std::size_t head_dim);
    StoreTier(const StoreTier&) = delete;
    StoreTier& operator=(const StoreTier&) = delete;

    std::size_t num_heads() const { return heads_.size(); }
    std::size_t head_dim() const { return head_dim_; }
    std::size_t size() const { return positions_.size(); }

    const std::vector<std::int64_t>& positions() const { return positions_; }
    const ArchiveHead& head(std::size_t h) const { return heads_.at(h); }
    // Threshold divisor in force for entry i (window width at ingest,
    // archive size at the latest re-evaluation).
    std::size_t divisor(std::size_t i) const { return divisors_.at(i); }

    std::shared_ptr<const ContextCache> context() const;
    void publish(std::shared_ptr<const ContextCache> next);

    // Appends a full block with its MAW; returns the archive index of its
    // first entry.
    std::size_t append_block(const KvBlock& block, std::size_t divisor);
    void set_salience(std::size_t h, std::size_t i, float value) { heads_.at(h).salience.at(i) = value; }
    void set_divisor(std::size_t i, std::size_t value) { divisors_.at(i) = value; }

private:
    std::size_t head_dim_;
    std::vector<ArchiveHead> heads_;
    std::vector<std::int64_t> positions_;
    std::vector<std::size_t> divisors_;

    mutable std::mutex context_mutex_;
    std::shared_ptr<const ContextCache> context_;
};

// Indices i with weights[i] > beta / divisor (strict).
std::vector<std::size_t> select_salient(std::span<const float> weights, double beta, std::size_t divisor);
std::vector<std::vector<std::size_t>> select_salient(const HeadVectors& weights, double beta, std::size_t divisor);

// Divides by the sum. std::nullopt when the set is empty or sums to zero;
// the caller then keeps an empty head.
std::optional<std::vector<float>> renormalize(std::span<const float> weights);

// Archives the blocks and adds, per head, the entries whose MAW exceeds
// beta / window_size to that head's context.
void ingest_evicted(StoreTier& store, std::span<const KvBlock> blocks, double beta, std::size_t window_size);

// Rebuilds the context from weights over the complete archive: per head,
// { i : a_cpu[h][i] > beta / archive_size }. Archive saliences are refreshed
// to a_cpu.
void reevaluate(StoreTier& store, const HeadVectors& a_cpu, double beta);

struct HeadTaskEntries {
    std::vector<std::size_t> selected;  // context entries, position order
    std::vector<std::size_t> padding;   // below-threshold fillers

    std::size_t size() const { return selected.size() + padding.size(); }
};

// Sparse attention work for adjacent heads [first_head, first_head + heads.size()).
struct HeadGroupTask {
    std::size_t first_head = 0;
    std::vector<HeadTaskEntries> heads;
};

enum class PaddingMode {
    kNone,    // ragged groups, no fillers
    kAttend,  // fillers participate in the sparse softmax
};

// max(1, round(batch * num_heads / core_count))
std::size_t head_group_size(std::size_t batch, std::size_t num_heads, std::size_t core_count);

// Groups adjacent heads and pads shorter heads to the group's longest
// selection with that head's best below-threshold archive entries, ranked by
// salience relative to their threshold (salience * divisor).
std::vector<HeadGroupTask> pack_head_groups(const StoreTier& store, const ContextCache& context, std::size_t batch,
                                            std::size_t core_count, PaddingMode padding = PaddingMode::kAttend);

// One line per archive entry and head:
// layer L head H position P maw S selected 0|1 padding 0|1
std::string dump_context(std::size_t layer, const StoreTier& store, const std::vector<HeadGroupTask>* tasks = nullptr);

}  // namespace hattn
