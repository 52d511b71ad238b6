#include "glocalk/matrix.hpp"

#include <cmath>

namespace glocalk {

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    DenseMatrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
        if (row.size() != m.cols_)
            throw ShapeError("from_rows: ragged row lengths");
        std::size_t c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool DenseMatrix::all_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
    DenseMatrix c(a.rows(), b.cols());
    const std::size_t n = a.rows(), k_dim = a.cols(), m = b.cols();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        double* crow = c.row_ptr(i);
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double aik = a(i, k);
            const double* brow = b.row_ptr(k);
            for (std::size_t j = 0; j < m; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

DenseMatrix matmul_transA(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows() != b.rows())
        throw ShapeError("matmul_transA: row counts " + std::to_string(a.rows()) + " vs " +
                         std::to_string(b.rows()));
    DenseMatrix c(a.cols(), b.cols());
    const std::size_t p = a.cols(), q = a.rows(), r = b.cols();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(p); ++i) {
        double* crow = c.row_ptr(i);
        for (std::size_t k = 0; k < q; ++k) {
            const double aki = a(k, i);
            const double* brow = b.row_ptr(k);
            for (std::size_t j = 0; j < r; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

DenseMatrix matmul_transB(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_transB: column counts " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()));
    DenseMatrix c(a.rows(), b.rows());
    const std::size_t p = a.rows(), q = a.cols(), r = b.rows();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(p); ++i) {
        const double* arow = a.row_ptr(i);
        double* crow = c.row_ptr(i);
        for (std::size_t j = 0; j < r; ++j) {
            const double* brow = b.row_ptr(j);
            double s = 0.0;
            for (std::size_t k = 0; k < q; ++k) s += arow[k] * brow[k];
            crow[j] = s;
        }
    }
    return c;
}

DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

double frobenius_sq(const DenseMatrix& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return s;
}

} // namespace glocalk
