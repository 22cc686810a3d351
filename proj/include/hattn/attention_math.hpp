#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "hattn/matrix.hpp"

namespace hattn {

struct HeadShape {
    std::size_t num_heads = 1;
    std::size_t head_dim = 1;
    double scale = 1.0;

    // scale = 1/sqrt(head_dim)
    static HeadShape with_default_scale(std::size_t num_heads, std::size_t head_dim);

    void validate() const;
};

// Partial attention of one head: output [queries x head_dim], the per-query
// log-sum-exp of the attended scores, and optionally the weight rows
// [queries x attended_keys].
template <typename T>
struct HeadResult {
    Matrix<T> output;
    std::vector<T> lse;
    Matrix<T> weights;
    bool has_weights = false;

    std::size_t num_queries() const { return output.rows(); }
};

template <typename T>
struct AttentionResult {
    std::vector<HeadResult<T>> heads;
};

template <typename T>
constexpr T neg_inf() {
    return -std::numeric_limits<T>::infinity();
}

// Max-shifted log(sum(exp(x))); -inf for an empty input.
template <typename T>
T logsumexp(std::span<const T> scores);

// Softmax attention of every query row against all key rows. An empty key set
// yields zero output with lse = -inf, the identity element of merge_states.
template <typename T>
HeadResult<T> attend_head(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, T scale, bool keep_weights);

template <typename T>
AttentionResult<T> attend(const HeadMatrices<T>& q, const HeadMatrices<T>& k, const HeadMatrices<T>& v,
                          const HeadShape& shape, bool keep_weights);

// LSE fusion of two partials over disjoint key sets. When both sides carry
// weight rows, the merged rows are [a's keys, b's keys] rescaled to the
// union's partition function.
template <typename T>
HeadResult<T> merge_states(const HeadResult<T>& a, const HeadResult<T>& b);

template <typename T>
AttentionResult<T> merge_states(const AttentionResult<T>& a, const AttentionResult<T>& b);

}  // namespace hattn
