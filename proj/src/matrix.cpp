#include "osr/matrix.hpp"

#include <cmath>
#include <cstring>

#include "osr/errors.hpp"

namespace osr {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
        if (row.size() != m.cols_)
            throw Error("from_rows: ragged initializer");
        std::size_t c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

bool Matrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix Matrix::extract_row(std::size_t r) const {
    Matrix out(1, cols_);
    std::memcpy(out.data(), row(r), cols_ * sizeof(double));
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw Error("matmul: inner dimensions disagree");
    Matrix out(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    // i-k-j order keeps the inner loop contiguous in both b and out.
    for (std::size_t i = 0; i < n; ++i) {
        double* out_row = out.row(i);
        const double* a_row = a.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a_row[p];
            const double* b_row = b.row(p);
            for (std::size_t j = 0; j < m; ++j)
                out_row[j] += aip * b_row[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw Error("matmul_tn: row counts disagree");
    Matrix out(a.cols(), b.cols());
    const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
    for (std::size_t p = 0; p < k; ++p) {
        const double* a_row = a.row(p);
        const double* b_row = b.row(p);
        for (std::size_t i = 0; i < n; ++i) {
            double* out_row = out.row(i);
            const double aip = a_row[i];
            for (std::size_t j = 0; j < m; ++j)
                out_row[j] += aip * b_row[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw Error("matmul_nt: column counts disagree");
    Matrix out(a.rows(), b.rows());
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* a_row = a.row(i);
        double* out_row = out.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double* b_row = b.row(j);
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += a_row[p] * b_row[p];
            out_row[j] = acc;
        }
    }
    return out;
}

Matrix col_sum(const Matrix& a) {
    Matrix out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* row = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j)
            out(0, j) += row[j];
    }
    return out;
}

Matrix col_mean(const Matrix& a) {
    if (a.rows() == 0)
        throw Error("col_mean: empty matrix");
    Matrix out = col_sum(a);
    for (std::size_t j = 0; j < a.cols(); ++j)
        out(0, j) /= static_cast<double>(a.rows());
    return out;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

} // namespace osr
