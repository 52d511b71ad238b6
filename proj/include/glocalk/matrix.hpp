#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "glocalk/errors.hpp"

namespace glocalk {

// Row-major dense matrix of doubles. All arithmetic in the library runs in
// 64-bit floating point with a fixed reduction order, so results are
// reproducible bit-for-bit across runs and thread counts.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

    static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static DenseMatrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }

    const double* row_ptr(std::size_t r) const { return values_.data() + r * cols_; }
    double* row_ptr(std::size_t r) { return values_.data() + r * cols_; }
    std::span<const double> row(std::size_t r) const { return {row_ptr(r), cols_}; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    bool same_shape(const DenseMatrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool all_finite() const;

    void fill(double v) { values_.assign(values_.size(), v); }

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

// C = A * B. Each output entry accumulates over k in ascending order, so the
// OpenMP version is bitwise identical to a sequential evaluation.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

// C = A^T * B  (a is q x p, b is q x r, result p x r).
DenseMatrix matmul_transA(const DenseMatrix& a, const DenseMatrix& b);

// C = A * B^T  (a is p x q, b is r x q, result p x r).
DenseMatrix matmul_transB(const DenseMatrix& a, const DenseMatrix& b);

DenseMatrix transpose(const DenseMatrix& a);

double frobenius_sq(const DenseMatrix& a);

} // namespace glocalk
