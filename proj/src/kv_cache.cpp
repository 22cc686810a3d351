#include "hattn/kv_cache.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "hattn/sparsifier.hpp"

namespace hattn {

void CacheConfig::validate() const {
    HATTN_CHECK(blk_num >= 2, "blk_num must be at least 2");
    HATTN_CHECK(blk_size >= 1, "blk_size must be positive");
    HATTN_CHECK(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    HATTN_CHECK(beta >= 0.0, "beta must be non-negative");
}

KvBlock::KvBlock(std::int64_t first, std::size_t num_heads, std::size_t blk_size, std::size_t head_dim)
    : first_position(first),
      keys(num_heads, Matrix<float>(blk_size, head_dim)),
      values(num_heads, Matrix<float>(blk_size, head_dim)),
      maw(num_heads, std::vector<float>(blk_size, 0.0f)) {}

std::vector<float> mean_rows(const Matrix<float>& rows) {
    std::vector<float> out(rows.cols(), 0.0f);
    if (rows.rows() == 0) {
        return out;
    }
    for (std::size_t c = 0; c < rows.cols(); ++c) {
        double sum = 0.0;
        for (std::size_t r = 0; r < rows.rows(); ++r) {
            sum += rows(r, c);
        }
        out[c] = static_cast<float>(sum / static_cast<double>(rows.rows()));
    }
    return out;
}

WindowCache::WindowCache(std::size_t layer_id, const CacheConfig& config, std::size_t num_heads,
                         std::size_t head_dim)
    : layer_id_(layer_id), config_(config), num_heads_(num_heads), head_dim_(head_dim), slots_(config.blk_num) {
    config_.validate();
    HATTN_CHECK(num_heads >= 1 && head_dim >= 1, "window needs at least one head and one dimension");
}

const KvBlock& WindowCache::block(std::size_t i) const {
    HATTN_CHECK(i < block_count_, "block index out of range");
    return slots_[slot(i)];
}

void WindowCache::append_kv(const KvChunk& kv_in, const HeadVectors& initial_maw) {
    const std::size_t n = kv_in.size();
    HATTN_CHECK(n >= 1, "append_kv needs at least one entry");
    HATTN_CHECK(kv_in.keys.size() == num_heads_ && kv_in.values.size() == num_heads_, "head count mismatch");
    HATTN_CHECK(kv_in.first_position == next_position_, "position discontinuity in append_kv");
    HATTN_CHECK(size_ + n <= capacity(), "window overflow: evict before appending");
    HATTN_CHECK(initial_maw.empty() || initial_maw.size() == num_heads_, "initial MAW head count mismatch");
    for (std::size_t h = 0; h < num_heads_; ++h) {
        HATTN_CHECK(kv_in.keys[h].rows() == n && kv_in.values[h].rows() == n, "ragged KV chunk");
        HATTN_CHECK(kv_in.keys[h].cols() == head_dim_ && kv_in.values[h].cols() == head_dim_,
                    "KV width differs from head_dim");
        HATTN_CHECK(initial_maw.empty() || initial_maw[h].size() == n, "initial MAW length mismatch");
    }

    for (std::size_t i = 0; i < n; ++i) {
        if (block_count_ == 0 || slots_[slot(block_count_ - 1)].full()) {
            HATTN_CHECK(block_count_ < slots_.size(), "window ring exhausted");
            slots_[slot(block_count_)] = KvBlock(next_position_, num_heads_, config_.blk_size, head_dim_);
            ++block_count_;
        }
        KvBlock& blk = slots_[slot(block_count_ - 1)];
        const std::size_t r = blk.occupancy;
        for (std::size_t h = 0; h < num_heads_; ++h) {
            const auto k = kv_in.keys[h].row(i);
            const auto v = kv_in.values[h].row(i);
            std::copy(k.begin(), k.end(), blk.keys[h].row(r).begin());
            std::copy(v.begin(), v.end(), blk.values[h].row(r).begin());
            blk.maw[h][r] = initial_maw.empty() ? 0.0f : initial_maw[h][i];
        }
        ++blk.occupancy;
        ++size_;
        ++next_position_;
    }
}

void WindowCache::update_maw(const HeadVectors& a_gpu, double alpha) {
    HATTN_CHECK(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    HATTN_CHECK(a_gpu.size() == num_heads_, "a_gpu head count mismatch");
    for (std::size_t h = 0; h < num_heads_; ++h) {
        HATTN_CHECK(a_gpu[h].size() == size_, "a_gpu must cover exactly the window entries");
    }
    const float keep = static_cast<float>(1.0 - alpha);
    const float take = static_cast<float>(alpha);
    std::size_t offset = 0;
    for (std::size_t b = 0; b < block_count_; ++b) {
        KvBlock& blk = slots_[slot(b)];
        for (std::size_t h = 0; h < num_heads_; ++h) {
            for (std::size_t i = 0; i < blk.occupancy; ++i) {
                blk.maw[h][i] = keep * blk.maw[h][i] + take * a_gpu[h][offset + i];
            }
        }
        offset += blk.occupancy;
    }
}

std::vector<KvBlock> WindowCache::evict_if_full(std::size_t incoming) {
    HATTN_CHECK(incoming <= capacity(), "a single step larger than the whole window is unsupported");
    std::vector<KvBlock> evicted;
    const std::size_t l_cur = size_ + incoming;
    if (l_cur < capacity()) {
        return evicted;
    }
    const std::size_t want = (l_cur - capacity() + 1 + config_.blk_size - 1) / config_.blk_size;
    std::size_t full_blocks = block_count_;
    if (block_count_ > 0 && !slots_[slot(block_count_ - 1)].full()) {
        --full_blocks;
    }
    const std::size_t count = std::min(want, full_blocks);
    HATTN_CHECK(capacity() - (size_ - count * config_.blk_size) >= incoming,
                "incoming step does not fit beside the partial head block");
    evicted.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        size_ -= slots_[tail_].occupancy;
        evicted.push_back(std::move(slots_[tail_]));
        slots_[tail_] = KvBlock{};
        tail_ = (tail_ + 1) % slots_.size();
        --block_count_;
    }
    return evicted;
}

void WindowCache::gather(HeadMatrices<float>& keys, HeadMatrices<float>& values) const {
    keys.assign(num_heads_, Matrix<float>());
    values.assign(num_heads_, Matrix<float>());
    for (std::size_t h = 0; h < num_heads_; ++h) {
        keys[h] = Matrix<float>(size_, head_dim_);
        values[h] = Matrix<float>(size_, head_dim_);
    }
    std::size_t offset = 0;
    for (std::size_t b = 0; b < block_count_; ++b) {
        const KvBlock& blk = slots_[slot(b)];
        const std::size_t n = blk.occupancy * head_dim_;
        for (std::size_t h = 0; h < num_heads_; ++h) {
            std::copy_n(blk.keys[h].flat().begin(), n, keys[h].row(offset).begin());
            std::copy_n(blk.values[h].flat().begin(), n, values[h].row(offset).begin());
        }
        offset += blk.occupancy;
    }
}

HeadVectors WindowCache::maw() const {
    HeadVectors out(num_heads_);
    for (std::size_t b = 0; b < block_count_; ++b) {
        const KvBlock& blk = slots_[slot(b)];
        for (std::size_t h = 0; h < num_heads_; ++h) {
            out[h].insert(out[h].end(), blk.maw[h].begin(), blk.maw[h].begin() + blk.occupancy);
        }
    }
    return out;
}

std::vector<std::int64_t> WindowCache::positions() const {
    std::vector<std::int64_t> out;
    out.reserve(size_);
    for (std::size_t b = 0; b < block_count_; ++b) {
        const KvBlock& blk = slots_[slot(b)];
        for (std::size_t i = 0; i < blk.occupancy; ++i) {
            out.push_back(blk.position(i));
        }
    }
    return out;
}

void offload(StoreTier& store, std::vector<KvBlock>&& evicted, double beta, std::size_t window_size) {
    if (evicted.empty()) {
        return;
    }
    for (const KvBlock& blk : evicted) {
        HATTN_CHECK(blk.full(), "only full blocks can be offloaded");
    }
    const std::vector<KvBlock> owned = std::move(evicted);
    ingest_evicted(store, owned, beta, window_size);
}

std::string dump_window(const WindowCache& cache) {
    std::string out;
    for (std::size_t b = 0; b < cache.block_count(); ++b) {
        const KvBlock& blk = cache.block(b);
        out += fmt::format("layer {} block {} positions {}-{} occupancy {}/{} maw_sum", cache.layer_id(), b,
                           blk.first_position, blk.first_position + static_cast<std::int64_t>(blk.occupancy) - 1,
                           blk.occupancy, blk.capacity());
        for (std::size_t h = 0; h < cache.num_heads(); ++h) {
            double sum = 0.0;
            for (std::size_t i = 0; i < blk.occupancy; ++i) {
                sum += blk.maw[h][i];
            }
            out += fmt::format(" h{}={:.6f}", h, sum);
        }
        out += '\n';
    }
    return out;
}

}  // namespace hattn
