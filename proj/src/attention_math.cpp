#include "hattn/attention_math.hpp"

#include <algorithm>

namespace hattn {

HeadShape HeadShape::with_default_scale(std::size_t num_heads, std::size_t head_dim) {
    HeadShape s{num_heads, head_dim, 1.0};
    if (head_dim > 0) {
        s.scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    }
    return s;
}

void HeadShape::validate() const {
    HATTN_CHECK(num_heads >= 1, "num_heads must be positive");
    HATTN_CHECK(head_dim >= 1, "head_dim must be positive");
    HATTN_CHECK(scale > 0.0 && std::isfinite(scale), "scale must be positive and finite");
}

template <typename T>
T logsumexp(std::span<const T> scores) {
    if (scores.empty()) {
        return neg_inf<T>();
    }
    const T m = *std::max_element(scores.begin(), scores.end());
    if (!std::isfinite(m)) {
        return m;
    }
    T sum = T(0);
    for (T s : scores) {
        sum += std::exp(s - m);
    }
    return m + std::log(sum);
}

template <typename T>
HeadResult<T> attend_head(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, T scale, bool keep_weights) {
    const std::size_t n_q = q.rows();
    const std::size_t n_k = k.rows();
    const std::size_t d = q.cols();
    HATTN_CHECK(k.rows() == v.rows(), "key and value counts differ");
    HATTN_CHECK(n_k == 0 || (k.cols() == d && v.cols() == d), "key/value width differs from query width");

    HeadResult<T> r;
    r.output = Matrix<T>(n_q, d);
    r.lse.assign(n_q, neg_inf<T>());
    r.has_weights = keep_weights;
    if (keep_weights) {
        r.weights = Matrix<T>(n_q, n_k);
    }
    if (n_k == 0) {
        return r;
    }

    // Dot products, the partition sum and the output are accumulated in
    // double even for float storage.
    std::vector<double> scores(n_k);
    std::vector<double> acc(d);
    for (std::size_t i = 0; i < n_q; ++i) {
        const auto qi = q.row(i);
        double m = neg_inf<double>();
        for (std::size_t j = 0; j < n_k; ++j) {
            const auto kj = k.row(j);
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                dot += static_cast<double>(qi[c]) * static_cast<double>(kj[c]);
            }
            scores[j] = static_cast<double>(scale) * dot;
            m = std::max(m, scores[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n_k; ++j) {
            scores[j] = std::exp(scores[j] - m);
            sum += scores[j];
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < n_k; ++j) {
            const double w = scores[j] / sum;
            const auto vj = v.row(j);
            for (std::size_t c = 0; c < d; ++c) {
                acc[c] += w * static_cast<double>(vj[c]);
            }
            if (keep_weights) {
                r.weights(i, j) = static_cast<T>(w);
            }
        }
        auto out = r.output.row(i);
        for (std::size_t c = 0; c < d; ++c) {
            out[c] = static_cast<T>(acc[c]);
        }
        r.lse[i] = static_cast<T>(m + std::log(sum));
    }
    return r;
}

template <typename T>
AttentionResult<T> attend(const HeadMatrices<T>& q, const HeadMatrices<T>& k, const HeadMatrices<T>& v,
                          const HeadShape& shape, bool keep_weights) {
    shape.validate();
    HATTN_CHECK(q.size() == shape.num_heads && k.size() == shape.num_heads && v.size() == shape.num_heads,
                "head count mismatch");
    AttentionResult<T> r;
    r.heads.reserve(shape.num_heads);
    for (std::size_t h = 0; h < shape.num_heads; ++h) {
        HATTN_CHECK(q[h].cols() == shape.head_dim, "query width differs from head_dim");
        r.heads.push_back(attend_head(q[h], k[h], v[h], static_cast<T>(shape.scale), keep_weights));
    }
    return r;
}

template <typename T>
HeadResult<T> merge_states(const HeadResult<T>& a, const HeadResult<T>& b) {
    HATTN_CHECK(a.output.rows() == b.output.rows(), "query count mismatch in merge");
    HATTN_CHECK(a.output.cols() == b.output.cols(), "head_dim mismatch in merge");
    const std::size_t n_q = a.output.rows();
    const std::size_t d = a.output.cols();
    const bool weights = a.has_weights && b.has_weights;
    const std::size_t na = weights ? a.weights.cols() : 0;
    const std::size_t nb = weights ? b.weights.cols() : 0;

    HeadResult<T> r;
    r.output = Matrix<T>(n_q, d);
    r.lse.assign(n_q, neg_inf<T>());
    r.has_weights = weights;
    if (weights) {
        r.weights = Matrix<T>(n_q, na + nb);
    }
    for (std::size_t i = 0; i < n_q; ++i) {
        const double la = a.lse[i];
        const double lb = b.lse[i];
        const double m = std::max(la, lb);
        if (m == neg_inf<double>()) {
            continue;
        }
        const double wa = std::exp(la - m);
        const double wb = std::exp(lb - m);
        const double z = wa + wb;
        const double ca = wa / z;
        const double cb = wb / z;
        auto out = r.output.row(i);
        const auto oa = a.output.row(i);
        const auto ob = b.output.row(i);
        for (std::size_t c = 0; c < d; ++c) {
            out[c] = static_cast<T>(ca * static_cast<double>(oa[c]) + cb * static_cast<double>(ob[c]));
        }
        r.lse[i] = static_cast<T>(m + std::log(z));
        if (weights) {
            for (std::size_t j = 0; j < na; ++j) {
                r.weights(i, j) = static_cast<T>(ca * static_cast<double>(a.weights(i, j)));
            }
            for (std::size_t j = 0; j < nb; ++j) {
                r.weights(i, na + j) = static_cast<T>(cb * static_cast<double>(b.weights(i, j)));
            }
        }
    }
    return r;
}

template <typename T>
AttentionResult<T> merge_states(const AttentionResult<T>& a, const AttentionResult<T>& b) {
    HATTN_CHECK(a.heads.size() == b.heads.size(), "head count mismatch in merge");
    AttentionResult<T> r;
    r.heads.reserve(a.heads.size());
    for (std::size_t h = 0; h < a.heads.size(); ++h) {
        r.heads.push_back(merge_states(a.heads[h], b.heads[h]));
    }
    return r;
}

#define HATTN_INSTANTIATE(T)                                                                              \
    template T logsumexp<T>(std::span<const T>);                                                          \
    template HeadResult<T> attend_head<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, T, bool); \
    template AttentionResult<T> attend<T>(const HeadMatrices<T>&, const HeadMatrices<T>&,                 \
                                          const HeadMatrices<T>&, const HeadShape&, bool);                \
    template HeadResult<T> merge_states<T>(const HeadResult<T>&, const HeadResult<T>&);                   \
    template AttentionResult<T> merge_states<T>(const AttentionResult<T>&, const AttentionResult<T>&);

HATTN_INSTANTIATE(float)
HATTN_INSTANTIATE(double)

#undef HATTN_INSTANTIATE

}  // namespace hattn
