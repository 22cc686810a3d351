#pragma once

#include <cstddef>
#include <vector>

#include "hattn/matrix.hpp"

namespace hattn::harness {

struct OracleResult {
    Matrix<double> output;   // [queries x head_dim]
    std::vector<double> lse;
    Matrix<double> weights;  // [queries x history]
};

// Exact softmax attention in 64-bit over the whole history of one head.
// Deliberately written without the engine's kernels.
OracleResult full_attention_oracle(const Matrix<double>& q, const Matrix<double>& keys, const Matrix<double>& values,
                                   double scale);

// Complete KV history of one layer, one matrix per head, row = position.
class History {
public:
    History(std::size_t heads, std::size_t head_dim);

    void append(const HeadMatrices<float>& keys, const HeadMatrices<float>& values);

    std::size_t size() const { return keys_.empty() ? 0 : keys_.front().rows(); }
    const Matrix<double>& keys(std::size_t h) const { return keys_.at(h); }
    const Matrix<double>& values(std::size_t h) const { return values_.at(h); }
    // max_j |V[j][c]| per coordinate.
    const std::vector<double>& max_abs_value(std::size_t h) const { return max_abs_.at(h); }

private:
    HeadMatrices<double> keys_;
    HeadMatrices<double> values_;
    std::vector<std::vector<double>> max_abs_;
};

}  // namespace hattn::harness
