#include "glocalk/reference.hpp"

namespace glocalk::ref {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("ref::matmul: inner dimensions disagree");
    DenseMatrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

DenseMatrix conv2d_same(const DenseMatrix& input, const DenseMatrix& kernel) {
    if (kernel.rows() != kernel.cols()) throw ShapeError("ref::conv2d_same: kernel not square");
    if (kernel.rows() % 2 == 0) throw ConfigError("ref::conv2d_same: kernel size must be odd");
    const std::ptrdiff_t rows = input.rows(), cols = input.cols();
    const std::ptrdiff_t t = kernel.rows(), a = (t - 1) / 2;
    DenseMatrix out(rows, cols);
    for (std::ptrdiff_t r = 0; r < rows; ++r)
        for (std::ptrdiff_t c = 0; c < cols; ++c) {
            double s = 0.0;
            for (std::ptrdiff_t p = 0; p < t; ++p)
                for (std::ptrdiff_t q = 0; q < t; ++q) {
                    const std::ptrdiff_t rr = r + p - a;
                    const std::ptrdiff_t cc = c + q - a;
                    if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
                    s += input(rr, cc) * kernel(p, q);
                }
            out(r, c) = s;
        }
    return out;
}

} // namespace glocalk::ref
