#include "hattn/harness/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace hattn::harness {

OracleResult full_attention_oracle(const Matrix<double>& q, const Matrix<double>& keys, const Matrix<double>& values,
                                   double scale) {
    HATTN_CHECK(keys.rows() == values.rows(), "oracle: key/value count mismatch");
    HATTN_CHECK(keys.rows() > 0, "oracle needs a non-empty history");
    HATTN_CHECK(q.cols() == keys.cols(), "oracle: query/key width mismatch");
    const std::size_t n = keys.rows();
    const std::size_t d = q.cols();
    const std::size_t dv = values.cols();

    OracleResult r;
    r.output = Matrix<double>(q.rows(), dv);
    r.lse.resize(q.rows());
    r.weights = Matrix<double>(q.rows(), n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < q.rows(); ++i) {
        double top = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                dot += q(i, c) * keys(j, c);
            }
            s[j] = dot * scale;
            top = std::max(top, s[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            s[j] = std::exp(s[j] - top);
            z += s[j];
        }
        r.lse[i] = top + std::log(z);
        for (std::size_t j = 0; j < n; ++j) {
            const double w = s[j] / z;
            r.weights(i, j) = w;
            for (std::size_t c = 0; c < dv; ++c) {
                r.output(i, c) += w * values(j, c);
            }
        }
    }
    return r;
}

History::History(std::size_t heads, std::size_t head_dim)
    : keys_(heads, Matrix<double>(0, head_dim)),
      values_(heads, Matrix<double>(0, head_dim)),
      max_abs_(heads, std::vector<double>(head_dim, 0.0)) {}

void History::append(const HeadMatrices<float>& keys, const HeadMatrices<float>& values) {
    HATTN_CHECK(keys.size() == keys_.size() && values.size() == values_.size(), "history head count mismatch");
    for (std::size_t h = 0; h < keys_.size(); ++h) {
        HATTN_CHECK(keys[h].rows() == values[h].rows(), "history key/value count mismatch");
        for (std::size_t r = 0; r < keys[h].rows(); ++r) {
            keys_[h].append_row(keys[h].row(r));
            values_[h].append_row(values[h].row(r));
            auto row = values[h].row(r);
            for (std::size_t c = 0; c < row.size(); ++c) {
                max_abs_[h][c] = std::max(max_abs_[h][c], std::abs(static_cast<double>(row[c])));
            }
        }
    }
}

}  // namespace hattn::harness
