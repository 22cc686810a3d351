#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hattn/attention_math.hpp"

using namespace hattn;

namespace {

Matrix<double> random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix<double> m(rows, cols);
    for (auto& x : m.flat()) {
        x = n(rng);
    }
    return m;
}

Matrix<double> take_rows(const Matrix<double>& m, const std::vector<std::size_t>& rows) {
    Matrix<double> out(0, m.cols());
    for (auto r : rows) {
        out.append_row(m.row(r));
    }
    return out;
}

// Element-by-element softmax written out independently of the kernel.
void brute_force(const Matrix<double>& q, const Matrix<double>& k, const Matrix<double>& v, double scale,
                 Matrix<double>& out, std::vector<double>& lse, Matrix<double>& w) {
    out = Matrix<double>(q.rows(), v.cols());
    w = Matrix<double>(q.rows(), k.rows());
    lse.assign(q.rows(), 0.0);
    for (std::size_t i = 0; i < q.rows(); ++i) {
        std::vector<double> e(k.rows());
        double z = 0.0;
        for (std::size_t j = 0; j < k.rows(); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < q.cols(); ++c) {
                s += q(i, c) * k(j, c);
            }
            e[j] = std::exp(s * scale);
            z += e[j];
        }
        lse[i] = std::log(z);
        for (std::size_t j = 0; j < k.rows(); ++j) {
            w(i, j) = e[j] / z;
            for (std::size_t c = 0; c < v.cols(); ++c) {
                out(i, c) += w(i, j) * v(j, c);
            }
        }
    }
}

}  // namespace

TEST(AttentionMath, SingleKeyReturnsItsValue) {
    Matrix<double> q(1, 3), k(1, 3), v(1, 3);
    q.flat()[0] = 0.3; q.flat()[1] = -1.0; q.flat()[2] = 2.0;
    k.flat()[0] = 1.5; k.flat()[1] = 0.5; k.flat()[2] = -0.25;
    v.flat()[0] = 7.0; v.flat()[1] = -2.0; v.flat()[2] = 0.5;
    const auto r = attend_head(q, k, v, 0.5, true);
    EXPECT_DOUBLE_EQ(r.weights(0, 0), 1.0);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_DOUBLE_EQ(r.output(0, c), v(0, c));
    }
    EXPECT_NEAR(r.lse[0], 0.5 * (0.45 - 0.5 - 0.5), 1e-15);
}

TEST(AttentionMath, IdenticalKeysSplitEvenly) {
    Matrix<double> q(1, 2, 1.0), k(2, 2, 0.7), v(2, 2);
    v(0, 0) = 1.0; v(0, 1) = 4.0; v(1, 0) = 3.0; v(1, 1) = -2.0;
    const auto r = attend_head(q, k, v, 1.0, true);
    EXPECT_DOUBLE_EQ(r.weights(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(r.weights(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(r.output(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(r.output(0, 1), 1.0);
}

TEST(AttentionMath, MatchesBruteForceSoftmax) {
    std::mt19937_64 rng(7);
    const auto q = random_matrix(rng, 2, 3);
    const auto k = random_matrix(rng, 4, 3);
    const auto v = random_matrix(rng, 4, 3);
    const double scale = 1.0 / std::sqrt(3.0);
    Matrix<double> out, w;
    std::vector<double> lse;
    brute_force(q, k, v, scale, out, lse, w);
    const auto r = attend_head(q, k, v, scale, true);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(r.lse[i], lse[i], 1e-12);
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_NEAR(r.weights(i, j), w(i, j), 1e-12);
        }
        for (std::size_t c = 0; c < 3; ++c) {
            EXPECT_NEAR(r.output(i, c), out(i, c), 1e-12);
        }
    }
}

TEST(AttentionMath, EmptyKeySetIsMergeIdentity) {
    std::mt19937_64 rng(3);
    const auto q = random_matrix(rng, 2, 4);
    const auto k = random_matrix(rng, 5, 4);
    const auto v = random_matrix(rng, 5, 4);
    const auto a = attend_head(q, k, v, 0.5, false);
    const auto empty = attend_head(q, Matrix<double>(0, 4), Matrix<double>(0, 4), 0.5, false);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(empty.lse[i], neg_inf<double>());
        for (std::size_t c = 0; c < 4; ++c) {
            EXPECT_EQ(empty.output(i, c), 0.0);
        }
    }
    for (const auto& m : {merge_states(a, empty), merge_states(empty, a)}) {
        EXPECT_EQ(m.output, a.output);
        EXPECT_EQ(m.lse, a.lse);
    }
}

TEST(AttentionMath, MergingIdenticalPartialsAddsLn2) {
    std::mt19937_64 rng(11);
    const auto q = random_matrix(rng, 3, 4);
    const auto k = random_matrix(rng, 6, 4);
    const auto v = random_matrix(rng, 6, 4);
    const auto a = attend_head(q, k, v, 0.5, false);
    const auto m = merge_states(a, a);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(m.lse[i], a.lse[i] + std::log(2.0), 1e-14);
        for (std::size_t c = 0; c < 4; ++c) {
            EXPECT_NEAR(m.output(i, c), a.output(i, c), 1e-14);
        }
    }
}

TEST(AttentionMath, SplitFivePlusThreeEqualsUnion) {
    std::mt19937_64 rng(5);
    const auto q = random_matrix(rng, 2, 6);
    const auto k = random_matrix(rng, 8, 6);
    const auto v = random_matrix(rng, 8, 6);
    const std::vector<std::size_t> left{0, 2, 3, 5, 7};
    const std::vector<std::size_t> right{1, 4, 6};
    const double scale = 0.4;
    const auto merged = merge_states(attend_head(q, take_rows(k, left), take_rows(v, left), scale, false),
                                     attend_head(q, take_rows(k, right), take_rows(v, right), scale, false));
    Matrix<double> out, w;
    std::vector<double> lse;
    brute_force(q, k, v, scale, out, lse, w);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(merged.lse[i], lse[i], 1e-10);
        for (std::size_t c = 0; c < 6; ++c) {
            EXPECT_NEAR(merged.output(i, c), out(i, c), 1e-10);
        }
    }
}

TEST(AttentionMath, MergeCarriesWeightsOfTheUnion) {
    std::mt19937_64 rng(9);
    const auto q = random_matrix(rng, 2, 4);
    const auto k = random_matrix(rng, 7, 4);
    const auto v = random_matrix(rng, 7, 4);
    const auto a = attend_head(q, take_rows(k, {0, 1, 2}), take_rows(v, {0, 1, 2}), 0.5, true);
    const auto b = attend_head(q, take_rows(k, {3, 4, 5, 6}), take_rows(v, {3, 4, 5, 6}), 0.5, true);
    const auto m = merge_states(a, b);
    const auto full = attend_head(q, k, v, 0.5, true);
    ASSERT_TRUE(m.has_weights);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 7; ++j) {
            EXPECT_NEAR(m.weights(i, j), full.weights(i, j), 1e-12);
        }
    }
}

TEST(AttentionMath, ThreeWayMergeOrderDoesNotMatter) {
    std::mt19937_64 rng(21);
    const auto q = random_matrix(rng, 2, 5);
    const auto k = random_matrix(rng, 9, 5);
    const auto v = random_matrix(rng, 9, 5);
    const auto p0 = attend_head(q, take_rows(k, {0, 1}), take_rows(v, {0, 1}), 0.5, false);
    const auto p1 = attend_head(q, take_rows(k, {2, 3, 4, 5}), take_rows(v, {2, 3, 4, 5}), 0.5, false);
    const auto p2 = attend_head(q, take_rows(k, {6, 7, 8}), take_rows(v, {6, 7, 8}), 0.5, false);
    const auto x = merge_states(merge_states(p0, p1), p2);
    const auto y = merge_states(p2, merge_states(p1, p0));
    const auto z = merge_states(merge_states(p0, p2), p1);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(x.lse[i], y.lse[i], 1e-12);
        EXPECT_NEAR(x.lse[i], z.lse[i], 1e-12);
        for (std::size_t c = 0; c < 5; ++c) {
            EXPECT_NEAR(x.output(i, c), y.output(i, c), 1e-12);
            EXPECT_NEAR(x.output(i, c), z.output(i, c), 1e-12);
        }
    }
}

TEST(AttentionMath, WeightRowsSumToOneInFloat) {
    std::mt19937 rng(4);
    std::normal_distribution<float> n(0.0f, 3.0f);
    Matrix<float> q(4, 16), k(300, 16), v(300, 16);
    for (auto* m : {&q, &k, &v}) {
        for (auto& x : m->flat()) {
            x = n(rng);
        }
    }
    const auto r = attend_head(q, k, v, 0.25f, true);
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 300; ++j) {
            s += r.weights(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(AttentionMath, LargeScoresStayFinite) {
    Matrix<float> q(1, 2), k(3, 2), v(3, 2, 1.0f);
    q(0, 0) = 100.0f;
    k(0, 0) = 100.0f;
    k(1, 0) = -100.0f;
    k(2, 0) = 99.0f;
    const auto r = attend_head(q, k, v, 1.0f, true);
    EXPECT_TRUE(std::isfinite(r.lse[0]));
    EXPECT_NEAR(r.lse[0], 1e4f + std::log1p(std::exp(-100.0f)), 1e-2);
    EXPECT_TRUE(std::isfinite(r.output(0, 0)));
    EXPECT_NEAR(r.output(0, 0), 1.0f, 1e-6);
}

TEST(AttentionMath, LogSumExp) {
    const std::vector<double> zero{0.0};
    EXPECT_EQ(logsumexp<double>(zero), 0.0);
    const std::vector<double> pair{2.5, 2.5};
    EXPECT_NEAR(logsumexp<double>(pair), 2.5 + std::log(2.0), 1e-15);
    const std::vector<double> big{1000.0, 1000.5};
    const double r = logsumexp<double>(big);
    EXPECT_TRUE(std::isfinite(r));
    EXPECT_NEAR(r, 1000.5 + std::log(1.0 + std::exp(-0.5)), 1e-12);
    EXPECT_EQ(logsumexp<double>(std::span<const double>()), neg_inf<double>());
}

TEST(AttentionMath, ShapeMismatchIsAContractViolation) {
    Matrix<double> q(1, 3), k(2, 4), v(2, 4);
    EXPECT_THROW(attend_head(q, k, v, 1.0, false), ContractViolation);
    Matrix<double> k3(2, 3), v_short(1, 3);
    EXPECT_THROW(attend_head(q, k3, v_short, 1.0, false), ContractViolation);
    const auto a = attend_head(q, k3, Matrix<double>(2, 3), 1.0, false);
    const auto b = attend_head(Matrix<double>(2, 3), k3, Matrix<double>(2, 3), 1.0, false);
    EXPECT_THROW(merge_states(a, b), ContractViolation);
}

TEST(AttentionMath, MultiHeadAttendUsesShapeScale) {
    std::mt19937_64 rng(2);
    const HeadShape shape = HeadShape::with_default_scale(2, 4);
    EXPECT_DOUBLE_EQ(shape.scale, 0.5);
    HeadMatrices<double> q{random_matrix(rng, 1, 4), random_matrix(rng, 1, 4)};
    HeadMatrices<double> k{random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)};
    HeadMatrices<double> v{random_matrix(rng, 3, 4), random_matrix(rng, 3, 4)};
    const auto r = attend(q, k, v, shape, false);
    ASSERT_EQ(r.heads.size(), 2u);
    for (std::size_t h = 0; h < 2; ++h) {
        const auto one = attend_head(q[h], k[h], v[h], 0.5, false);
        EXPECT_EQ(r.heads[h].output, one.output);
    }
}
