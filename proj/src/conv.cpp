#include "glocalk/conv.hpp"

namespace glocalk {

namespace {

void check_kernel(const DenseMatrix& kernel) {
    if (kernel.rows() != kernel.cols())
        throw ShapeError("conv2d_same: kernel must be square, got " +
                         std::to_string(kernel.rows()) + "x" + std::to_string(kernel.cols()));
    if (kernel.rows() % 2 == 0)
        throw ConfigError("conv2d_same: kernel size must be odd, got " +
                          std::to_string(kernel.rows()));
}

} // namespace

DenseMatrix conv2d_same(const DenseMatrix& input, const DenseMatrix& kernel) {
    check_kernel(kernel);
    const std::ptrdiff_t rows = input.rows(), cols = input.cols();
    const std::ptrdiff_t t = kernel.rows(), a = (t - 1) / 2;
    DenseMatrix out(rows, cols);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        double* orow = out.row_ptr(r);
        for (std::ptrdiff_t c = 0; c < cols; ++c) {
            double s = 0.0;
            for (std::ptrdiff_t p = 0; p < t; ++p) {
                const std::ptrdiff_t rr = r + p - a;
                if (rr < 0 || rr >= rows) continue;
                const double* irow = input.row_ptr(rr);
                const double* krow = kernel.row_ptr(p);
                for (std::ptrdiff_t q = 0; q < t; ++q) {
                    const std::ptrdiff_t cc = c + q - a;
                    if (cc < 0 || cc >= cols) continue;
                    s += irow[cc] * krow[q];
                }
            }
            orow[c] = s;
        }
    }
    return out;
}

DenseMatrix conv2d_grad_kernel(const DenseMatrix& input, const DenseMatrix& upstream,
                               std::size_t t) {
    if (!input.same_shape(upstream))
        throw ShapeError("conv2d_grad_kernel: input/upstream shapes differ");
    if (t % 2 == 0) throw ConfigError("conv2d_grad_kernel: kernel size must be odd");
    const std::ptrdiff_t rows = input.rows(), cols = input.cols();
    const std::ptrdiff_t ts = t, a = (ts - 1) / 2;
    DenseMatrix dk(t, t);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < ts; ++p) {
        for (std::ptrdiff_t q = 0; q < ts; ++q) {
            double s = 0.0;
            for (std::ptrdiff_t r = 0; r < rows; ++r) {
                const std::ptrdiff_t rr = r + p - a;
                if (rr < 0 || rr >= rows) continue;
                const double* urow = upstream.row_ptr(r);
                const double* irow = input.row_ptr(rr);
                const std::ptrdiff_t clo = std::max<std::ptrdiff_t>(0, a - q);
                const std::ptrdiff_t chi = std::min(cols, cols + a - q);
                for (std::ptrdiff_t c = clo; c < chi; ++c) s += urow[c] * irow[c + q - a];
            }
            dk(p, q) = s;
        }
    }
    return dk;
}

DenseMatrix conv2d_grad_input(const DenseMatrix& upstream, const DenseMatrix& kernel) {
    return conv2d_same(upstream, flip180(kernel));
}

DenseMatrix flip180(const DenseMatrix& k) {
    DenseMatrix f(k.rows(), k.cols());
    for (std::size_t i = 0; i < k.rows(); ++i)
        for (std::size_t j = 0; j < k.cols(); ++j)
            f(i, j) = k(k.rows() - 1 - i, k.cols() - 1 - j);
    return f;
}

} // namespace glocalk
