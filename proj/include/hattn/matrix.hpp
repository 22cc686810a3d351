#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hattn/contract.hpp"

namespace hattn {

// Dense row-major matrix. Rows can be appended, which is how the store tier
// grows its per-head archives.
template <typename T>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0; }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<T> flat() { return data_; }
    std::span<const T> flat() const { return data_; }

    void reserve_rows(std::size_t rows) { data_.reserve(rows * cols_); }

    // Appends one row; an empty matrix adopts the row's width.
    template <typename U>
    void append_row(std::span<const U> values) {
        if (rows_ == 0 && cols_ == 0) {
            cols_ = values.size();
        }
        HATTN_CHECK(values.size() == cols_, "row width mismatch");
        for (const U& v : values) {
            data_.push_back(static_cast<T>(v));
        }
        ++rows_;
    }

    void clear_rows() {
        data_.clear();
        rows_ = 0;
    }

    template <typename U>
    Matrix<U> cast() const {
        Matrix<U> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out.flat()[i] = static_cast<U>(data_[i]);
        }
        return out;
    }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

// One matrix per attention head, indexed by head.
template <typename T>
using HeadMatrices = std::vector<Matrix<T>>;

}  // namespace hattn
