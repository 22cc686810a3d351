#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "hattn/sparsifier.hpp"

using namespace hattn;

namespace {

KvBlock make_block(std::int64_t first, const HeadVectors& maw, std::size_t d = 2) {
    const std::size_t heads = maw.size();
    const std::size_t n = maw.front().size();
    KvBlock b(first, heads, n, d);
    b.occupancy = n;
    b.maw = maw;
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            b.keys[h](i, 0) = static_cast<float>(first) + static_cast<float>(i);
            b.values[h](i, 0) = 10.0f * static_cast<float>(h) + static_cast<float>(i);
        }
    }
    return b;
}

std::vector<std::size_t> brute_threshold(const std::vector<float>& w, double beta, std::size_t divisor) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (static_cast<double>(w[i]) > beta / static_cast<double>(divisor)) {
            out.push_back(i);
        }
    }
    return out;
}

}  // namespace

TEST(Sparsifier, BetaZeroSelectsEveryPositiveEntry) {
    const std::vector<float> w{0.1f, 1e-9f, 0.5f};
    EXPECT_EQ(select_salient(w, 0.0, 3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Sparsifier, UniformWeightsAtTheThresholdAreExcluded) {
    const std::vector<float> w(4, 0.25f);
    EXPECT_TRUE(select_salient(w, 1.0, 4).empty());
}

TEST(Sparsifier, ThresholdPointTwo) {
    const std::vector<float> w{0.5f, 0.3f, 0.1f, 0.05f, 0.05f};
    EXPECT_EQ(select_salient(w, 1.0, 5), (std::vector<std::size_t>{0, 1}));
}

TEST(Sparsifier, Renormalize) {
    const std::vector<float> a{0.5f, 0.3f};
    const auto r = renormalize(a);
    ASSERT_TRUE(r.has_value());
    EXPECT_FLOAT_EQ((*r)[0], 0.625f);
    EXPECT_FLOAT_EQ((*r)[1], 0.375f);
    const std::vector<float> one{0.01f};
    EXPECT_EQ(*renormalize(one), std::vector<float>{1.0f});
    EXPECT_FALSE(renormalize(std::span<const float>()).has_value());
    const std::vector<float> zeros{0.0f, 0.0f};
    EXPECT_FALSE(renormalize(zeros).has_value());
}

TEST(Sparsifier, ZeroMawBlockGrowsArchiveOnly) {
    StoreTier store(1, 2);
    const std::vector<KvBlock> blocks{make_block(0, {{0.0f, 0.0f, 0.0f, 0.0f}})};
    ingest_evicted(store, blocks, 1.0, 8);
    EXPECT_EQ(store.size(), 4u);
    EXPECT_EQ(store.context()->heads[0].size(), 0u);
}

TEST(Sparsifier, BetaZeroIngestsWholeBlock) {
    StoreTier store(2, 2);
    const std::vector<KvBlock> blocks{make_block(0, {{0.1f, 0.2f, 0.3f}, {0.01f, 0.02f, 0.03f}})};
    ingest_evicted(store, blocks, 0.0, 8);
    const auto ctx = store.context();
    for (std::size_t h = 0; h < 2; ++h) {
        EXPECT_EQ(ctx->heads[h].indices, (std::vector<std::size_t>{0, 1, 2}));
        EXPECT_EQ(ctx->heads[h].values(2, 0), 10.0f * static_cast<float>(h) + 2.0f);
    }
    EXPECT_FLOAT_EQ(ctx->heads[0].weights[0], 0.1f / 0.6f);
}

TEST(Sparsifier, IngestUsesWindowDivisor) {
    StoreTier store(1, 2);
    // threshold 1/8 = 0.125
    const std::vector<KvBlock> blocks{make_block(0, {{0.125f, 0.126f, 0.5f, 0.01f}})};
    ingest_evicted(store, blocks, 1.0, 8);
    EXPECT_EQ(store.context()->heads[0].indices, (std::vector<std::size_t>{1, 2}));
    EXPECT_EQ(store.divisor(0), 8u);
}

TEST(Sparsifier, UniformReevaluationEmptiesContext) {
    StoreTier store(1, 2);
    const std::vector<KvBlock> blocks{make_block(0, {{0.9f, 0.9f, 0.9f, 0.9f}})};
    ingest_evicted(store, blocks, 1.0, 4);
    ASSERT_EQ(store.context()->heads[0].size(), 4u);
    reevaluate(store, {{0.25f, 0.25f, 0.25f, 0.25f}}, 1.0);
    EXPECT_EQ(store.context()->heads[0].size(), 0u);
}

TEST(Sparsifier, ReevaluationReinstatesAPrunedEntry) {
    StoreTier store(1, 2);
    const std::vector<KvBlock> blocks{make_block(0, {{0.0f, 0.5f, 0.0f, 0.0f}})};
    ingest_evicted(store, blocks, 1.0, 4);
    ASSERT_EQ(store.context()->heads[0].indices, std::vector<std::size_t>{1});
    const HeadVectors a{{0.9f, 0.04f, 0.03f, 0.03f}};
    reevaluate(store, a, 1.0);
    EXPECT_EQ(store.context()->heads[0].indices, std::vector<std::size_t>{0});
    EXPECT_EQ(store.context()->heads[0].keys(0, 0), 0.0f);
    EXPECT_EQ(store.head(0).salience, a[0]);
    EXPECT_EQ(store.divisor(3), 4u);

    const auto first = store.context();
    reevaluate(store, a, 1.0);
    const auto second = store.context();
    EXPECT_EQ(first->heads[0].indices, second->heads[0].indices);
    EXPECT_EQ(first->heads[0].keys, second->heads[0].keys);
    EXPECT_EQ(first->heads[0].weights, second->heads[0].weights);
}

TEST(Sparsifier, ReevaluationLengthMismatchIsRejected) {
    StoreTier store(1, 2);
    const std::vector<KvBlock> blocks{make_block(0, {{0.1f, 0.1f}})};
    ingest_evicted(store, blocks, 1.0, 4);
    EXPECT_THROW(reevaluate(store, {{0.5f}}, 1.0), ContractViolation);
}

TEST(Sparsifier, GroupSizeRounding) {
    EXPECT_EQ(head_group_size(1, 8, 8), 1u);
    EXPECT_EQ(head_group_size(1, 8, 32), 1u);
    EXPECT_EQ(head_group_size(1, 8, 4), 2u);
    EXPECT_EQ(head_group_size(1, 8, 3), 3u);  // 2.67 rounds to 3
    EXPECT_EQ(head_group_size(4, 8, 1), 8u);  // capped at the head count
}

TEST(Sparsifier, EnoughCoresMeansNoPadding) {
    StoreTier store(2, 2);
    const std::vector<KvBlock> blocks{make_block(0, {{0.9f, 0.0f, 0.0f}, {0.0f, 0.0f, 0.0f}})};
    ingest_evicted(store, blocks, 1.0, 3);
    const auto tasks = pack_head_groups(store, *store.context(), 1, 2);
    ASSERT_EQ(tasks.size(), 2u);
    for (const auto& t : tasks) {
        ASSERT_EQ(t.heads.size(), 1u);
        EXPECT_TRUE(t.heads[0].padding.empty());
    }
}

TEST(Sparsifier, ShorterHeadIsPaddedWithItsLargestMaw) {
    StoreTier store(2, 2);
    // threshold 1/10; head 0 keeps 5, head 1 keeps 3
    const HeadVectors maw{{0.2f, 0.2f, 0.2f, 0.2f, 0.15f, 0.01f, 0.01f, 0.01f},
                          {0.3f, 0.05f, 0.3f, 0.09f, 0.3f, 0.02f, 0.08f, 0.0f}};
    const std::vector<KvBlock> blocks{make_block(0, maw)};
    ingest_evicted(store, blocks, 1.0, 10);
    const auto tasks = pack_head_groups(store, *store.context(), 1, 1);
    ASSERT_EQ(tasks.size(), 1u);
    const auto& t = tasks[0];
    EXPECT_EQ(t.heads[0].size(), 5u);
    EXPECT_TRUE(t.heads[0].padding.empty());
    EXPECT_EQ(t.heads[1].selected, (std::vector<std::size_t>{0, 2, 4}));
    EXPECT_EQ(t.heads[1].padding, (std::vector<std::size_t>{3, 6}));
    EXPECT_EQ(t.heads[1].size(), 5u);

    const auto ragged = pack_head_groups(store, *store.context(), 1, 1, PaddingMode::kNone);
    EXPECT_TRUE(ragged[0].heads[1].padding.empty());
}

TEST(Sparsifier, EmptyHeadTakesTopArchiveEntries) {
    StoreTier store(2, 2);
    const HeadVectors maw{{0.5f, 0.5f, 0.5f, 0.5f, 0.0f, 0.0f}, {0.01f, 0.04f, 0.02f, 0.05f, 0.03f, 0.0f}};
    const std::vector<KvBlock> blocks{make_block(0, maw)};
    ingest_evicted(store, blocks, 1.0, 6);
    ASSERT_EQ(store.context()->heads[1].size(), 0u);
    const auto tasks = pack_head_groups(store, *store.context(), 1, 1);
    EXPECT_EQ(tasks[0].heads[1].padding, (std::vector<std::size_t>{3, 1, 4, 2}));

    StoreTier empty(2, 2);
    const auto none = pack_head_groups(empty, *empty.context(), 1, 1);
    EXPECT_EQ(none[0].heads[0].size(), 0u);
    EXPECT_EQ(none[0].heads[1].size(), 0u);
}

TEST(Sparsifier, ContextDumpFormat) {
    StoreTier store(1, 2);
    const std::vector<KvBlock> blocks{make_block(4, {{0.5f, 0.125f}})};
    ingest_evicted(store, blocks, 1.0, 4);
    EXPECT_EQ(dump_context(2, store),
              "layer 2 head 0 position 4 maw 0.5 selected 1 padding 0\n"
              "layer 2 head 0 position 5 maw 0.125 selected 0 padding 0\n");
}

// Random weights: selection matches a brute-force filter, is nested in beta,
// and reevaluation equals a fresh selection.
TEST(Sparsifier, RandomSelectionMatchesBruteForce) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t heads = 1 + trial % 4;
        const std::size_t n = 4 * (1 + trial % 7);
        HeadVectors maw(heads, std::vector<float>(n));
        for (auto& row : maw) {
            for (auto& x : row) {
                x = static_cast<float>(std::pow(unit(rng), 3.0) / static_cast<double>(n) * 4.0);
            }
        }
        const double beta = unit(rng) * 2.0;
        StoreTier store(heads, 2);
        std::vector<KvBlock> blocks{make_block(0, maw)};
        ingest_evicted(store, blocks, beta, n);
        const auto ctx = store.context();
        for (std::size_t h = 0; h < heads; ++h) {
            EXPECT_EQ(ctx->heads[h].indices, brute_threshold(maw[h], beta, n));
            const auto lo = select_salient(maw[h], beta, n);
            const auto hi = select_salient(maw[h], beta * 1.5, n);
            EXPECT_TRUE(std::includes(lo.begin(), lo.end(), hi.begin(), hi.end()));
        }
        HeadVectors a(heads, std::vector<float>(n));
        for (auto& row : a) {
            for (auto& x : row) {
                x = static_cast<float>(unit(rng) * 2.0 / static_cast<double>(n));
            }
        }
        reevaluate(store, a, beta);
        const auto fresh = select_salient(a, beta, n);
        for (std::size_t h = 0; h < heads; ++h) {
            EXPECT_EQ(store.context()->heads[h].indices, fresh[h]);
        }
    }
}
