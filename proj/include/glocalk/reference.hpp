#pragma once

#include "glocalk/matrix.hpp"

namespace glocalk::ref {

// Naive single-thread kernels. These stay deliberately simple so they can
// serve as oracles for the OpenMP kernels in tests and the benchmark.

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

// Brute-force sliding window: for every output cell, sum the overlapping
// products directly.
DenseMatrix conv2d_same(const DenseMatrix& input, const DenseMatrix& kernel);

} // namespace glocalk::ref
