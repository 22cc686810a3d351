#include <gtest/gtest.h>

#include "hattn/contract.hpp"
#include "hattn/perf_model.hpp"

using namespace hattn::perf;

namespace {

WorkloadShape reference_shape(std::size_t n_window, std::size_t n_store, std::size_t batch = 1) {
    WorkloadShape s;
    s.batch = batch;
    s.heads = 32;
    s.head_dim = 128;
    s.n_window = n_window;
    s.n_store = n_store;
    s.n_selected = n_store / 5;
    s.n_q = 1;
    s.bytes_per_elem = 2;
    return s;
}

}  // namespace

TEST(PerfModel, NoEntriesCostNothing) { EXPECT_EQ(attention_cost(0, reference_shape(0, 0), default_gpu()), 0.0); }

TEST(PerfModel, DecodeIsMemoryBoundOnTheGpu) {
    for (std::size_t n : {256u, 4096u, 65536u}) {
        EXPECT_TRUE(attention_terms(n, reference_shape(0, 0), default_gpu()).memory_bound());
    }
}

TEST(PerfModel, DoublingEntriesDoublesTheMemoryTerm) {
    const auto s = reference_shape(0, 0);
    const double a = attention_cost(1 << 16, s, default_gpu());
    const double b = attention_cost(1 << 17, s, default_gpu());
    EXPECT_NEAR(b / a, 2.0, 1e-3);
}

TEST(PerfModel, CostTermsArithmetic) {
    WorkloadShape s = reference_shape(0, 0, 2);
    s.n_q = 3;
    const auto t = attention_terms(100, s, default_gpu());
    EXPECT_DOUBLE_EQ(t.flops, 2.0 * 32 * 3 * 100 * 4 * 128);
    EXPECT_DOUBLE_EQ(t.bytes, 2.0 * 2 * 32 * 100 * 128 * 2 + 2.0 * 2 * 32 * 3 * 128 * 2);
    EXPECT_DOUBLE_EQ(t.time, std::max(t.flops / 38.7e12, t.bytes / 768e9));
}

TEST(PerfModel, CostIsMonotoneInShapeAndDevice) {
    const auto base = reference_shape(0, 0);
    const double t = attention_cost(1000, base, default_gpu());
    for (auto bump : {&WorkloadShape::batch, &WorkloadShape::heads, &WorkloadShape::head_dim, &WorkloadShape::n_q,
                      &WorkloadShape::bytes_per_elem}) {
        WorkloadShape s = base;
        s.*bump *= 2;
        EXPECT_GE(attention_cost(1000, s, default_gpu()), t);
    }
    DeviceSpec slow = default_gpu();
    slow.mem_bw /= 2;
    EXPECT_GE(attention_cost(1000, base, slow), t);
    slow = default_gpu();
    slow.peak_flops /= 2;
    EXPECT_GE(attention_cost(1000, base, slow), t);
}

TEST(PerfModel, EmptyStoreTransfersOnlyLatency) {
    const auto b = time_offload_baseline(reference_shape(1024, 0), default_gpu(), default_link());
    EXPECT_DOUBLE_EQ(b.transfer, default_link().latency);
    EXPECT_DOUBLE_EQ(b.total(), b.transfer + b.compute);
}

TEST(PerfModel, BaselineFrozenValues) {
    const auto b = time_offload_baseline(reference_shape(1024, 4096), default_gpu(), default_link());
    EXPECT_NEAR(b.transfer, 0.002107152, 1e-15);
    EXPECT_NEAR(b.compute, 0.00010926933333333333, 1e-15);
}

TEST(PerfModel, TransferGrowsLinearlyInStore) {
    const auto link = default_link();
    const double t1 = time_offload_baseline(reference_shape(1024, 1000), default_gpu(), link).transfer - link.latency;
    const double t3 = time_offload_baseline(reference_shape(1024, 3000), default_gpu(), link).transfer - link.latency;
    EXPECT_NEAR(t3 / t1, 3.0, 1e-12);
}

TEST(PerfModel, TransferDominatesFromTheFirstBlock) {
    for (std::size_t n_store = 32; n_store <= 65536; n_store *= 2) {
        const auto b = time_offload_baseline(reference_shape(1024, n_store), default_gpu(), default_link());
        EXPECT_GT(b.transfer, b.compute) << n_store;
    }
}

TEST(PerfModel, MergePayload) {
    EXPECT_DOUBLE_EQ(merge_bytes(reference_shape(0, 0)), 8256.0);
    const auto s = reference_shape(1024, 4096);
    EXPECT_LT(merge_bytes(s), 1e-3 * store_kv_bytes(s));
}

TEST(PerfModel, NothingSelectedMeansGpuPlusMerge) {
    WorkloadShape s = reference_shape(1024, 4096);
    s.n_selected = 0;
    const auto h = time_hybrid(s, default_gpu(), default_cpu(), default_link(), 0.5);
    EXPECT_EQ(h.cpu_part, 0.0);
    EXPECT_DOUBLE_EQ(h.total(), h.gpu_part + h.merge);
}

TEST(PerfModel, EfficiencyOutsideUnitIntervalIsRejected) {
    const auto s = reference_shape(1024, 4096);
    EXPECT_THROW(time_hybrid(s, default_gpu(), default_cpu(), default_link(), 0.0), hattn::ContractViolation);
    EXPECT_THROW(time_hybrid(s, default_gpu(), default_cpu(), default_link(), 1.5), hattn::ContractViolation);
}

TEST(PerfModel, HeatmapFrozenCells) {
    const ModelSpecs specs;
    const WorkloadShape base = reference_shape(0, 0);
    EXPECT_NEAR(evaluate_cell(1024, 4096, 1, base, specs).speedup, 34.632925359191006, 1e-9);
    EXPECT_NEAR(evaluate_cell(256, 32768, 8, base, specs).speedup, 40.55477480740893, 1e-9);
    EXPECT_NEAR(evaluate_cell(2048, 8192, 4, base, specs).speedup, 40.07660637908692, 1e-9);
    EXPECT_NEAR(evaluate_cell(512, 0, 1, base, specs).speedup, 0.9878435683995602, 1e-9);
}

TEST(PerfModel, HeatmapTrends) {
    const std::vector<std::size_t> windows{256, 512, 1024, 2048};
    const std::vector<std::size_t> stores{0, 1024, 2048, 4096, 8192, 16384, 32768};
    const std::vector<std::size_t> batches{1, 2, 4, 8};
    const auto cells = speedup_heatmap(windows, stores, batches, reference_shape(0, 0), ModelSpecs{});
    ASSERT_EQ(cells.size(), windows.size() * stores.size() * batches.size());
    auto at = [&](std::size_t b, std::size_t w, std::size_t s) {
        return cells[(b * windows.size() + w) * stores.size() + s];
    };
    for (std::size_t b = 0; b < batches.size(); ++b) {
        for (std::size_t w = 0; w < windows.size(); ++w) {
            EXPECT_NEAR(at(b, w, 0).speedup, 1.0, 0.05);
            for (std::size_t s = 0; s < stores.size(); ++s) {
                const auto& c = at(b, w, s);
                EXPECT_EQ(c.batch, batches[b]);
                EXPECT_EQ(c.n_window, windows[w]);
                EXPECT_EQ(c.n_store, stores[s]);
                if (s > 0) {
                    EXPECT_GE(c.speedup, at(b, w, s - 1).speedup);
                }
                // batch only helps once something crosses the link
                if (b > 0 && c.n_store > 0) {
                    EXPECT_GE(c.speedup, at(b - 1, w, s).speedup);
                }
                if (c.n_store >= 4 * c.n_window) {
                    EXPECT_GT(c.speedup, 1.0);
                }
            }
        }
    }
}

TEST(PerfModel, EmptyStoreRowSlipsWithBatch) {
    const WorkloadShape base = reference_shape(0, 0);
    const ModelSpecs specs;
    const double b1 = evaluate_cell(256, 0, 1, base, specs).speedup;
    const double b8 = evaluate_cell(256, 0, 8, base, specs).speedup;
    EXPECT_LT(b8, b1);
    EXPECT_GT(b8, 0.95);
}

TEST(PerfModel, HeatmapCsvHeader) {
    const auto csv = heatmap_csv({evaluate_cell(256, 1024, 1, reference_shape(0, 0), ModelSpecs{})});
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "n_window,n_store,batch,t_baseline_transfer,t_baseline_compute,t_hybrid_gpu,t_hybrid_cpu,t_merge,"
              "speedup");
}
