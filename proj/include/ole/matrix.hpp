#pragma once

// Dense real matrix with row-major storage. This is the substrate every
// other module works on: feature batches, network weights, SVD factors.
// Entries are validated finite when a matrix is built from user-supplied
// values; internal arithmetic trusts its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "ole/common.hpp"

namespace ole {

class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    /// Builds a matrix from row-major entries, enforcing the finiteness
    /// invariant. Throws std::invalid_argument on NaN/Inf or size mismatch.
    static Matrix from_entries(std::size_t rows, std::size_t cols, std::vector<double> entries) {
        if (entries.size() != rows * cols) {
            throw std::invalid_argument("Matrix::from_entries: " + std::to_string(entries.size()) +
                                        " entries for a " + std::to_string(rows) + "x" +
                                        std::to_string(cols) + " matrix");
        }
        for (double v : entries) {
            if (!std::isfinite(v)) {
                throw std::invalid_argument("Matrix::from_entries: non-finite entry");
            }
        }
        Matrix m;
        m.rows_ = rows;
        m.cols_ = cols;
        m.data_ = std::move(entries);
        return m;
    }

    /// Convenience literal constructor: Matrix::from_rows({{1,2},{3,4}}).
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        std::vector<double> entries;
        entries.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) {
                throw std::invalid_argument("Matrix::from_rows: ragged rows");
            }
            entries.insert(entries.end(), row.begin(), row.end());
        }
        return from_entries(r, c, std::move(entries));
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    const std::vector<double>& entries() const { return data_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    /// Column j as a vector copy.
    std::vector<double> column(std::size_t j) const {
        std::vector<double> out(rows_);
        for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
        return out;
    }

    void set_column(std::size_t j, const std::vector<double>& v) {
        for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = v[i];
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()));
    }
}

} // namespace detail

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

inline Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const double* b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    detail::require_same_shape(a, b, "operator+");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    detail::require_same_shape(a, b, "operator-");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

inline Matrix operator*(double s, const Matrix& a) {
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
    return out;
}

inline Matrix operator*(const Matrix& a, double s) { return s * a; }

inline double frobenius_norm(const Matrix& a) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a.data()[i] * a.data()[i];
    return std::sqrt(sum);
}

/// Frobenius inner product <a, b>.
inline double frobenius_dot(const Matrix& a, const Matrix& b) {
    detail::require_same_shape(a, b, "frobenius_dot");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a.data()[i] * b.data()[i];
    return sum;
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i]));
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    detail::require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

} // namespace ole
