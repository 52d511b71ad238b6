#pragma once

#include "glocalk/matrix.hpp"

namespace glocalk {

// Same-size 2D cross-correlation (no kernel flip) with zero padding of width
// (t-1)/2 and stride 1. The kernel must be square with odd side length.
DenseMatrix conv2d_same(const DenseMatrix& input, const DenseMatrix& kernel);

// Gradient of conv2d_same(input, kernel) w.r.t. the kernel, given the
// upstream gradient w.r.t. the output: dK[p][q] = sum_{r,c} up[r][c] *
// input[r+p-a][c+q-a] with zero padding, a = (t-1)/2.
DenseMatrix conv2d_grad_kernel(const DenseMatrix& input, const DenseMatrix& upstream,
                               std::size_t t);

// Gradient w.r.t. the input: cross-correlation of the upstream gradient with
// the 180-degree-rotated kernel.
DenseMatrix conv2d_grad_input(const DenseMatrix& upstream, const DenseMatrix& kernel);

DenseMatrix flip180(const DenseMatrix& k);

} // namespace glocalk
