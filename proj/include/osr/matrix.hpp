#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace osr {

/// Dense row-major matrix of 64-bit floats. Rows are instances, columns are
/// features; this is the carrier for input batches X and embedding batches Z.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool all_finite() const;

    Matrix extract_row(std::size_t r) const;

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// a (n x k) times b (k x m).
Matrix matmul(const Matrix& a, const Matrix& b);
/// transpose(a) times b; a is (k x n), result (n x m). Used for weight gradients.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a times transpose(b); b is (m x k), result (n x m). Used for input gradients.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// Sum of each column, as a 1 x cols matrix.
Matrix col_sum(const Matrix& a);
/// Mean of each column, as a 1 x cols matrix.
Matrix col_mean(const Matrix& a);

/// Squared Euclidean distance between two equal-length vectors.
double squared_distance(const double* a, const double* b, std::size_t n);

} // namespace osr
