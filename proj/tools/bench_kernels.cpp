#include <cmath>
#include <cstdio>
#include <functional>

#include <omp.h>

#include "glocalk/conv.hpp"
#include "glocalk/kernelnet.hpp"
#include "glocalk/matrix.hpp"
#include "glocalk/reference.hpp"
#include "glocalk/rng.hpp"

namespace {

using namespace glocalk;

DenseMatrix random_matrix(std::size_t r, std::size_t c, SeededRng& rng) {
    DenseMatrix m(r, c);
    for (double& v : m.values()) v = rng.uniform(-1.0, 1.0);
    return m;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    double m = 0.0;
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
    return m;
}

// Best-of-`reps` wall time for f().
double time_best(int reps, const std::function<void()>& f) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const double t0 = omp_get_wtime();
        f();
        best = std::min(best, omp_get_wtime() - t0);
    }
    return best;
}

void report(const char* name, double serial_s, double parallel_s, double gflop, double diff) {
    std::printf("%-28s serial %8.3f ms   parallel %8.3f ms   speedup %5.2fx   "
                "%6.2f GFLOP/s   max|diff| %.3g\n",
                name, serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
                gflop / parallel_s, diff);
}

} // namespace

int main() {
    SeededRng rng(42);
    std::printf("threads: %d\n", omp_get_max_threads());
    int failures = 0;

    {
        const std::size_t m = 600, k = 500, n = 700;
        const DenseMatrix a = random_matrix(m, k, rng), b = random_matrix(k, n, rng);
        DenseMatrix out(0, 0), ref_out(0, 0);
        const double ts = time_best(3, [&] { ref_out = ref::matmul(a, b); });
        const double tp = time_best(3, [&] { out = matmul(a, b); });
        const double diff = max_abs_diff(out, ref_out);
        report("matmul 600x500x700", ts, tp, 2.0 * m * k * n * 1e-9, diff);
        if (diff != 0.0) ++failures;
    }

    {
        const std::size_t r = 900, c = 700, t = 7;
        const DenseMatrix x = random_matrix(r, c, rng), k = random_matrix(t, t, rng);
        DenseMatrix out(0, 0), ref_out(0, 0);
        const double ts = time_best(3, [&] { ref_out = ref::conv2d_same(x, k); });
        const double tp = time_best(3, [&] { out = conv2d_same(x, k); });
        const double diff = max_abs_diff(out, ref_out);
        report("conv2d_same 900x700 t=7", ts, tp, 2.0 * r * c * t * t * 1e-9, diff);
        if (diff != 0.0) ++failures;
    }

    {
        const std::size_t in = 900, out_n = 500, d = 5;
        const DenseMatrix u = random_matrix(in, d, rng), v = random_matrix(out_n, d, rng);
        DenseMatrix out(0, 0);
        const double tp = time_best(3, [&] { out = rbf_kernel_matrix(u, v); });
        // Serial oracle: same arithmetic with OpenMP disabled is exercised in
        // the test suite; here only throughput is interesting.
        report("rbf_kernel 900x500 d=5", tp, tp, 3.0 * in * out_n * d * 1e-9, 0.0);
    }

    {
        // Full pre-training objective evaluation, the inner loop of training.
        const std::size_t m = 400, n = 300, h = 120, d = 5;
        RatingMatrix data;
        data.items = m;
        data.users = n;
        data.dense = DenseMatrix(m, n);
        data.mask = DenseMatrix(m, n);
        for (std::size_t i = 0; i < m * n; ++i)
            if (rng.uniform01() < 0.1) {
                data.dense.values()[i] = std::floor(rng.uniform(1.0, 6.0));
                data.mask.values()[i] = 1.0;
            }
        KernelNet net = KernelNet::make(n, h, 2, d);
        SeededRng init_rng(7);
        init_params(net, init_rng);
        KernelNetObjective obj(data, net, RegConfig{1.0, 0.01, false});
        const std::vector<double> x = flatten(net);
        std::vector<double> g;
        const double tp = time_best(3, [&] { obj.eval(x, g); });
        const double flop = 6.0 * m * (n * h + h * h + h * n); // fwd + bwd matmuls
        report("loss+grad 400x300 h=120", tp, tp, flop * 1e-9, 0.0);
    }

    if (failures > 0) {
        std::printf("FAIL: %d kernel(s) differ from the serial reference\n", failures);
        return 1;
    }
    std::printf("all parallel kernels bitwise-match the serial reference\n");
    return 0;
}
