#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "glocalk/errors.hpp"

namespace glocalk {

// Central-difference gradient of a scalar function, the oracle every
// analytic gradient in the library is checked against.
template <class F>
std::vector<double> finite_diff_gradient(F&& f, std::vector<double> x, double eps) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + eps;
        const double fp = f(x);
        x[i] = xi - eps;
        const double fm = f(x);
        x[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_gradient: non-finite value at coordinate " +
                               std::to_string(i));
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

// Relative agreement between an analytic and a finite-difference gradient
// entry; tiny entries compare absolutely so FD round-off does not dominate.
inline double grad_rel_error(double analytic, double fd) {
    const double diff = std::abs(analytic - fd);
    if (diff <= 1e-8) return 0.0;
    return diff / std::max(std::abs(analytic), std::abs(fd));
}

} // namespace glocalk
