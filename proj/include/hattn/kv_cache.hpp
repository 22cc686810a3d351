#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hattn/matrix.hpp"

namespace hattn {

class StoreTier;

// Per-head vector of per-entry values (MAW, weights aggregated over queries).
using HeadVectors = std::vector<std::vector<float>>;

struct CacheConfig {
    std::size_t blk_num = 8;
    std::size_t blk_size = 32;
    double alpha = 0.5;  // MAW smoothing factor
    double beta = 1.0;   // sparsification threshold factor

    std::size_t capacity() const { return blk_num * blk_size; }
    void validate() const;
};

// New KV entries of one step, all heads, starting at first_position.
struct KvChunk {
    std::int64_t first_position = 0;
    HeadMatrices<float> keys;
    HeadMatrices<float> values;

    std::size_t size() const { return keys.empty() ? 0 : keys.front().rows(); }
};

// Fixed-size block of window entries. Rows past `occupancy` are unused.
struct KvBlock {
    std::int64_t first_position = 0;
    std::size_t occupancy = 0;
    HeadMatrices<float> keys;    // [blk_size x head_dim] per head
    HeadMatrices<float> values;  // [blk_size x head_dim] per head
    HeadVectors maw;             // [blk_size] per head

    KvBlock() = default;
    KvBlock(std::int64_t first, std::size_t num_heads, std::size_t blk_size, std::size_t head_dim);

    std::size_t capacity() const { return maw.empty() ? 0 : maw.front().size(); }
    bool full() const { return occupancy == capacity(); }
    std::int64_t position(std::size_t i) const { return first_position + static_cast<std::int64_t>(i); }
};

// Mean of the weight rows, one value per column.
std::vector<float> mean_rows(const Matrix<float>& rows);

// Window tier of one layer: a ring of at most blk_num blocks, oldest at the
// tail. Eviction removes whole blocks from the tail only.
class WindowCache {
public:
    WindowCache(std::size_t layer_id, const CacheConfig& config, std::size_t num_heads, std::size_t head_dim);

    std::size_t layer_id() const { return layer_id_; }
    std::size_t num_heads() const { return num_heads_; }
    std::size_t head_dim() const { return head_dim_; }
    const CacheConfig& config() const { return config_; }
    std::size_t capacity() const { return config_.capacity(); }
    std::size_t size() const { return size_; }
    std::size_t block_count() const { return block_count_; }
    std::int64_t next_position() const { return next_position_; }

    // i = 0 is the oldest block.
    const KvBlock& block(std::size_t i) const;

    // Inserts at the head. `initial_maw`, when given, holds one value per new
    // entry per head; otherwise new entries start at zero.
    void append_kv(const KvChunk& kv_in, const HeadVectors& initial_maw = {});

    // maw <- (1 - alpha) * maw + alpha * a_gpu for every current entry.
    void update_maw(const HeadVectors& a_gpu, double alpha);

    // Frees room for `incoming` entries. When size + incoming >= capacity,
    // the oldest ceil((size + incoming - capacity + 1) / blk_size) full
    // blocks are removed and returned oldest first.
    std::vector<KvBlock> evict_if_full(std::size_t incoming);

    // Keys/values of all entries in position order, one matrix per head.
    void gather(HeadMatrices<float>& keys, HeadMatrices<float>& values) const;
    HeadVectors maw() const;
    std::vector<std::int64_t> positions() const;

private:
    std::size_t slot(std::size_t i) const { return (tail_ + i) % slots_.size(); }

    std::size_t layer_id_;
    CacheConfig config_;
    std::size_t num_heads_;
    std::size_t head_dim_;
    std::vector<KvBlock> slots_;
    std::size_t tail_ = 0;
    std::size_t block_count_ = 0;
    std::size_t size_ = 0;
    std::int64_t next_position_ = 0;
};

// Hands evicted blocks to the store tier and runs threshold selection on
// them (divisor = window attention width of the evicting step).
void offload(StoreTier& store, std::vector<KvBlock>&& evicted, double beta, std::size_t window_size);

// Text dump: one line per block with layer, index, position range,
// occupancy and per-head MAW sums.
std::string dump_window(const WindowCache& cache);

}  // namespace hattn
