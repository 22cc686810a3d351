#include "hattn/sparsifier.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace hattn {

namespace {

bool passes(float weight, double beta, std::size_t divisor) {
    return static_cast<double>(weight) > beta / static_cast<double>(divisor);
}

void copy_row(const Matrix<float>& from, std::size_t r, Matrix<float>& to) {
    to.append_row(from.row(r));
}

void refresh_weights(const StoreTier& store, std::size_t h, HeadContext& head) {
    std::vector<float> s;
    s.reserve(head.indices.size());
    for (std::size_t i : head.indices) {
        s.push_back(store.head(h).salience[i]);
    }
    head.weights = renormalize(s).value_or(std::vector<float>{});
}

HeadContext empty_head(std::size_t head_dim) {
    HeadContext c;
    c.keys = Matrix<float>(0, head_dim);
    c.values = Matrix<float>(0, head_dim);
    return c;
}

}  // namespace

StoreTier::StoreTier(std::size_t num_heads, std::size_t head_dim) : head_dim_(head_dim), heads_(num_heads) {
    HATTN_CHECK(num_heads >= 1 && head_dim >= 1, "store needs at least one head and one dimension");
    auto ctx = std::make_shared<ContextCache>();
    for (auto& h : heads_) {
        h.keys = Matrix<float>(0, head_dim);
        h.values = Matrix<float>(0, head_dim);
        ctx->heads.push_back(empty_head(head_dim));
    }
    context_ = std::move(ctx);
}

std::shared_ptr<const ContextCache> StoreTier::context() const {
    std::lock_guard lock(context_mutex_);
    return context_;
}

void StoreTier::publish(std::shared_ptr<const ContextCache> next) {
    HATTN_CHECK(next && next->heads.size() == heads_.size(), "context head count mismatch");
    std::lock_guard lock(context_mutex_);
    context_ = std::move(next);
}

std::size_t StoreTier::append_block(const KvBlock& block, std::size_t divisor) {
    HATTN_CHECK(block.keys.size() == heads_.size(), "block head count mismatch");
    HATTN_CHECK(positions_.empty() || block.first_position > positions_.back(), "archive must stay position-sorted");
    const std::size_t first = positions_.size();
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        HATTN_CHECK(block.keys[h].cols() == head_dim_, "block width differs from head_dim");
        for (std::size_t i = 0; i < block.occupancy; ++i) {
            copy_row(block.keys[h], i, heads_[h].keys);
            copy_row(block.values[h], i, heads_[h].values);
            heads_[h].salience.push_back(block.maw[h][i]);
        }
    }
    for (std::size_t i = 0; i < block.occupancy; ++i) {
        positions_.push_back(block.position(i));
        divisors_.push_back(divisor);
    }
    return first;
}

std::vector<std::size_t> select_salient(std::span<const float> weights, double beta, std::size_t divisor) {
    HATTN_CHECK(divisor >= 1, "threshold divisor must be positive");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (passes(weights[i], beta, divisor)) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> select_salient(const HeadVectors& weights, double beta, std::size_t divisor) {
    std::vector<std::vector<std::size_t>> out;
    out.reserve(weights.size());
    for (const auto& w : weights) {
        out.push_back(select_salient(std::span<const float>(w), beta, divisor));
    }
    return out;
}

std::optional<std::vector<float>> renormalize(std::span<const float> weights) {
    double sum = 0.0;
    for (float w : weights) {
        sum += w;
    }
    if (weights.empty() || !(sum > 0.0)) {
        return std::nullopt;
    }
    std::vector<float> out(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out[i] = static_cast<float>(weights[i] / sum);
    }
    return out;
}

void ingest_evicted(StoreTier& store, std::span<const KvBlock> blocks, double beta, std::size_t window_size) {
    if (blocks.empty()) {
        return;
    }
    HATTN_CHECK(window_size >= 1, "window size divisor must be positive");
    auto next = std::make_shared<ContextCache>(*store.context());
    for (const KvBlock& blk : blocks) {
        const std::size_t first = store.append_block(blk, window_size);
        for (std::size_t h = 0; h < store.num_heads(); ++h) {
            HeadContext& ctx = next->heads[h];
            const ArchiveHead& arch = store.head(h);
            for (std::size_t i = 0; i < blk.occupancy; ++i) {
                if (passes(blk.maw[h][i], beta, window_size)) {
                    ctx.indices.push_back(first + i);
                    copy_row(arch.keys, first + i, ctx.keys);
                    copy_row(arch.values, first + i, ctx.values);
                }
            }
        }
    }
    for (std::size_t h = 0; h < store.num_heads(); ++h) {
        refresh_weights(store, h, next->heads[h]);
    }
    store.publish(std::move(next));
}

void reevaluate(StoreTier& store, const HeadVectors& a_cpu, double beta) {
    const std::size_t m = store.size();
    HATTN_CHECK(a_cpu.size() == store.num_heads(), "a_cpu head count mismatch");
    for (const auto& w : a_cpu) {
        HATTN_CHECK(w.size() == m, "a_cpu must cover the complete archive");
    }
    auto next = std::make_shared<ContextCache>();
    next->heads.reserve(store.num_heads());
    for (std::size_t i = 0; i < m; ++i) {
        store.set_divisor(i, m);
    }
    for (std::size_t h = 0; h < store.num_heads(); ++h) {
        for (std::size_t i = 0; i < m; ++i) {
            store.set_salience(h, i, a_cpu[h][i]);
        }
        HeadContext ctx = empty_head(store.head_dim());
        if (m > 0) {
            const ArchiveHead& arch = store.head(h);
            ctx.indices = select_salient(std::span<const float>(a_cpu[h]), beta, m);
            ctx.keys.reserve_rows(ctx.indices.size());
            ctx.values.reserve_rows(ctx.indices.size());
            for (std::size_t i : ctx.indices) {
                copy_row(arch.keys, i, ctx.keys);
                copy_row(arch.values, i, ctx.values);
            }
        }
        refresh_weights(store, h, ctx);
        next->heads.push_back(std::move(ctx));
    }
    store.publish(std::move(next));
}

std::size_t head_group_size(std::size_t batch, std::size_t num_heads, std::size_t core_count) {
    HATTN_CHECK(core_count >= 1, "core_count must be positive");
    const double ideal = static_cast<double>(batch * num_heads) / static_cast<double>(core_count);
    const auto g = static_cast<std::size_t>(std::llround(ideal));
    return std::clamp<std::size_t>(g, 1, std::max<std::size_t>(num_heads, 1));
}

std::vector<HeadGroupTask> pack_head_groups(const StoreTier& store, const ContextCache& context, std::size_t batch,
                                            std::size_t core_count, PaddingMode padding) {
    const std::size_t num_heads = store.num_heads();
    HATTN_CHECK(context.heads.size() == num_heads, "context head count mismatch");
    const std::size_t g = head_group_size(batch, num_heads, core_count);
    const std::size_t m = store.size();

    std::vector<HeadGroupTask> tasks;
    std::vector<char> taken(m);
    std::vector<std::size_t> candidates;
    for (std::size_t first = 0; first < num_heads; first += g) {
        HeadGroupTask task;
        task.first_head = first;
        const std::size_t last = std::min(first + g, num_heads);
        std::size_t target = 0;
        for (std::size_t h = first; h < last; ++h) {
            target = std::max(target, context.heads[h].size());
        }
        for (std::size_t h = first; h < last; ++h) {
            HeadTaskEntries entries;
            entries.selected = context.heads[h].indices;
            const std::size_t missing = target - entries.selected.size();
            if (padding == PaddingMode::kAttend && missing > 0) {
                std::fill(taken.begin(), taken.end(), 0);
                for (std::size_t i : entries.selected) {
                    taken[i] = 1;
                }
                candidates.clear();
                for (std::size_t i = 0; i < m; ++i) {
                    if (!taken[i]) {
                        candidates.push_back(i);
                    }
                }
                const auto& sal = store.head(h).salience;
                auto rank = [&](std::size_t i) {
                    return static_cast<double>(sal[i]) * static_cast<double>(store.divisor(i));
                };
                const std::size_t take = std::min(missing, candidates.size());
                std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                                  candidates.end(), [&](std::size_t a, std::size_t b) {
                                      const double ra = rank(a);
                                      const double rb = rank(b);
                                      return ra != rb ? ra > rb : a < b;
                                  });
                entries.padding.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take));
            }
            task.heads.push_back(std::move(entries));
        }
        tasks.push_back(std::move(task));
    }
    return tasks;
}

std::string dump_context(std::size_t layer, const StoreTier& store, const std::vector<HeadGroupTask>* tasks) {
    const auto ctx = store.context();
    std::string out;
    for (std::size_t h = 0; h < store.num_heads(); ++h) {
        std::vector<char> selected(store.size(), 0);
        std::vector<char> padded(store.size(), 0);
        for (std::size_t i : ctx->heads[h].indices) {
            selected[i] = 1;
        }
        if (tasks != nullptr) {
            for (const auto& t : *tasks) {
                if (h >= t.first_head && h < t.first_head + t.heads.size()) {
                    for (std::size_t i : t.heads[h - t.first_head].padding) {
                        padded[i] = 1;
                    }
                }
            }
        }
        for (std::size_t i = 0; i < store.size(); ++i) {
            out += fmt::format("layer {} head {} position {} maw {:.9g} selected {} padding {}\n", layer, h,
                               store.positions()[i], store.head(h).salience[i], int(selected[i]), int(padded[i]));
        }
    }
    return out;
}

}  // namespace hattn
