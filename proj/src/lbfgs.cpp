#include "glocalk/lbfgs.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <iostream>
#include <limits>

namespace glocalk {

namespace {

// All reductions here are serial: optimizer arithmetic must not depend on
// thread count.
double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double nrm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double inf_norm(std::span<const double> a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

// Minimizer of the cubic through (a, fa, da) and (b, fb, db); NaN when the
// fit has no interior minimum.
double cubic_min(double a, double fa, double da, double b, double fb, double db) {
    const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - da * db;
    if (!(disc >= 0.0)) return std::numeric_limits<double>::quiet_NaN();
    double d2 = std::sqrt(disc);
    if (b < a) d2 = -d2;
    const double denom = db - da + 2.0 * d2;
    if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return b - (b - a) * (db + d2 - d1) / denom;
}

// phi(alpha) = f(x + alpha*d) with gradient; tracks the best point seen so a
// failed search can still return its lowest value.
struct PhiEval {
    const Objective& f;
    std::span<const double> x;
    std::span<const double> d;
    std::size_t budget;

    std::vector<double> xt, gt;
    double ft = 0.0, ddt = 0.0, alpha = 0.0;
    std::size_t evals = 0;

    std::vector<double> best_x, best_g;
    double best_f = std::numeric_limits<double>::infinity();
    double best_dd = 0.0, best_alpha = 0.0;

    PhiEval(const Objective& f_, std::span<const double> x_, std::span<const double> d_,
            std::size_t budget_)
        : f(f_), x(x_), d(d_), budget(budget_) {}

    void eval(double a) {
        xt.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) xt[i] = x[i] + a * d[i];
        ft = f(xt, gt);
        if (!std::isfinite(ft))
            throw NumericError("line search: objective returned a non-finite value");
        ddt = dot(gt, d);
        alpha = a;
        ++evals;
        if (ft < best_f) {
            best_f = ft;
            best_dd = ddt;
            best_alpha = a;
            best_x = xt;
            best_g = gt;
        }
    }
};

struct CurvaturePair {
    std::vector<double> s, y;
    double rho = 0.0; // 1 / s.y
};

// d = -H g via the two-loop recursion, H0 = gamma*I from the newest pair.
void two_loop(const std::deque<CurvaturePair>& pairs, const std::vector<double>& g,
              std::vector<double>& d) {
    d.assign(g.begin(), g.end());
    if (pairs.empty()) {
        for (double& v : d) v = -v;
        return;
    }
    std::vector<double> alpha(pairs.size());
    for (std::size_t i = pairs.size(); i-- > 0;) {
        const auto& p = pairs[i];
        alpha[i] = p.rho * dot(p.s, d);
        for (std::size_t j = 0; j < d.size(); ++j) d[j] -= alpha[i] * p.y[j];
    }
    const auto& last = pairs.back();
    const double gamma = (1.0 / last.rho) / dot(last.y, last.y);
    for (double& v : d) v *= gamma;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        const double beta = p.rho * dot(p.y, d);
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += (alpha[i] - beta) * p.s[j];
    }
    for (double& v : d) v = -v;
}

} // namespace

void LbfgsConfig::validate() const {
    if (history < 1) throw ConfigError("LbfgsConfig: history must be >= 1");
    if (!(c1 > 0.0 && c1 < c2 && c2 < 1.0))
        throw ConfigError("LbfgsConfig: need 0 < c1 < c2 < 1");
    if (max_line_search_steps < 1)
        throw ConfigError("LbfgsConfig: max_line_search_steps must be >= 1");
    if (!(grad_tol >= 0.0)) throw ConfigError("LbfgsConfig: grad_tol must be >= 0");
}

LineSearchResult strong_wolfe_line_search(const Objective& f, std::span<const double> x,
                                          std::span<const double> direction, double f0,
                                          std::span<const double> g0, double initial_step,
                                          const LbfgsConfig& cfg) {
    if (x.size() != direction.size() || x.size() != g0.size())
        throw ShapeError("strong_wolfe_line_search: dimension mismatch");
    LineSearchResult out;
    out.f = f0;
    out.dd0 = dot(g0, direction);

    std::vector<double> fallback_dir;
    std::span<const double> d = direction;
    if (!(out.dd0 < 0.0)) {
        std::cerr << "strong_wolfe_line_search: non-descent direction (g.d = " << out.dd0
                  << "), falling back to -g\n";
        fallback_dir.assign(g0.begin(), g0.end());
        for (double& v : fallback_dir) v = -v;
        d = fallback_dir;
        out.dd0 = -dot(g0, g0);
        out.fallback = true;
        if (!(out.dd0 < 0.0)) { // zero gradient, nowhere to go
            out.x.assign(x.begin(), x.end());
            out.grad.assign(g0.begin(), g0.end());
            return out;
        }
    }

    const double dd0 = out.dd0;
    const double c1 = cfg.c1, c2 = cfg.c2;
    PhiEval pe(f, x, d, cfg.max_line_search_steps);

    auto succeed = [&](bool from_current) {
        out.success = true;
        out.evals = pe.evals;
        if (from_current) {
            out.step = pe.alpha;
            out.f = pe.ft;
            out.dd = pe.ddt;
            out.x = std::move(pe.xt);
            out.grad = std::move(pe.gt);
        }
        return out;
    };
    auto fail = [&]() {
        out.success = false;
        out.evals = pe.evals;
        if (pe.best_f < f0) {
            out.step = pe.best_alpha;
            out.f = pe.best_f;
            out.dd = pe.best_dd;
            out.x = std::move(pe.best_x);
            out.grad = std::move(pe.best_g);
        } else {
            out.step = 0.0;
            out.f = f0;
            out.dd = dd0;
            out.x.assign(x.begin(), x.end());
            out.grad.assign(g0.begin(), g0.end());
        }
        return out;
    };

    // Zoom (Nocedal-Wright 3.6): cubic interpolation with a bisection
    // safeguard on the bracketing interval.
    auto zoom = [&](double alo, double flo, double ddlo, double ahi, double fhi,
                    double ddhi) -> LineSearchResult {
        while (pe.evals < pe.budget) {
            const double lo = std::min(alo, ahi), hi = std::max(alo, ahi);
            const double w = hi - lo;
            if (!(w > 1e-16 * std::max(1.0, hi))) break;
            double a = cubic_min(alo, flo, ddlo, ahi, fhi, ddhi);
            if (!std::isfinite(a) || a <= lo + 0.05 * w || a >= hi - 0.05 * w) a = lo + 0.5 * w;
            pe.eval(a);
            if (pe.ft > f0 + c1 * a * dd0 || pe.ft >= flo) {
                ahi = a;
                fhi = pe.ft;
                ddhi = pe.ddt;
            } else {
                if (std::abs(pe.ddt) <= -c2 * dd0) return succeed(true);
                if (pe.ddt * (ahi - alo) >= 0.0) {
                    ahi = alo;
                    fhi = flo;
                    ddhi = ddlo;
                }
                alo = a;
                flo = pe.ft;
                ddlo = pe.ddt;
            }
        }
        return fail();
    };

    // Bracketing (Nocedal-Wright 3.5). When a trial already satisfies both
    // conditions but its slope has not collapsed, one cubic refinement is
    // tried: on quadratics this lands on the exact line minimum, which keeps
    // the finite-termination property of the outer method. The 1e-2 gate
    // skips the refinement only when the step is already near-exact; looser
    // gates leave enough residual slope to break finite termination.
    constexpr double polish_gate = 1e-2;
    double a_prev = 0.0, f_prev = f0, dd_prev = dd0;
    double a = initial_step;
    if (!(a > 0.0)) throw ConfigError("strong_wolfe_line_search: initial step must be > 0");
    for (std::size_t i = 1; pe.evals < pe.budget; ++i) {
        pe.eval(a);
        if (pe.ft > f0 + c1 * a * dd0 || (i > 1 && pe.ft >= f_prev))
            return zoom(a_prev, f_prev, dd_prev, a, pe.ft, pe.ddt);
        if (std::abs(pe.ddt) <= -c2 * dd0) {
            if (std::abs(pe.ddt) > polish_gate * std::abs(dd0) && pe.evals < pe.budget) {
                const double astar = cubic_min(a_prev, f_prev, dd_prev, a, pe.ft, pe.ddt);
                if (std::isfinite(astar) && astar > 0.0 && astar < 1e3 * a && astar != a) {
                    std::vector<double> sx = std::move(pe.xt), sg = std::move(pe.gt);
                    const double sf = pe.ft, sdd = pe.ddt, sa = pe.alpha;
                    pe.eval(astar);
                    if (pe.ft <= f0 + c1 * astar * dd0 && std::abs(pe.ddt) <= -c2 * dd0 &&
                        pe.ft < sf)
                        return succeed(true);
                    out.step = sa;
                    out.f = sf;
                    out.dd = sdd;
                    out.x = std::move(sx);
                    out.grad = std::move(sg);
                    return succeed(false);
                }
            }
            return succeed(true);
        }
        if (pe.ddt >= 0.0) return zoom(a, pe.ft, pe.ddt, a_prev, f_prev, dd_prev);
        a_prev = a;
        f_prev = pe.ft;
        dd_prev = pe.ddt;
        a *= 2.0;
        if (!(a < 1e20)) break;
    }
    return fail();
}

namespace {

MinimizeResult minimize_impl(const Objective& f, std::vector<double> x0, const LbfgsConfig& cfg,
                             std::size_t epoch, const IterCallback& cb, const double* f0_hint,
                             std::vector<double>* g0_hint) {
    cfg.validate();
    MinimizeResult res;
    res.x = std::move(x0);
    const std::size_t n = res.x.size();
    if (n == 0) throw ConfigError("minimize: empty parameter vector");

    if (f0_hint != nullptr && g0_hint != nullptr && g0_hint->size() == n) {
        res.loss = *f0_hint;
        res.grad = std::move(*g0_hint);
    } else {
        res.loss = f(res.x, res.grad);
        ++res.evals;
    }
    if (!std::isfinite(res.loss)) throw NumericError("minimize: non-finite loss at x0");
    if (res.grad.size() != n) throw ShapeError("minimize: gradient size mismatch");
    res.grad_norm = inf_norm(res.grad);

    std::deque<CurvaturePair> pairs;
    std::vector<double> d(n);

    for (std::size_t iter = 1; iter <= cfg.maxiter; ++iter) {
        if (res.grad_norm <= cfg.grad_tol) {
            res.converged = true;
            break;
        }
        const auto t0 = std::chrono::steady_clock::now();
        two_loop(pairs, res.grad, d);

        LineSearchResult ls = strong_wolfe_line_search(f, res.x, d, res.loss, res.grad, 1.0, cfg);
        res.evals += ls.evals;

        TraceEntry te;
        te.epoch = epoch;
        te.iter = iter;
        te.f_before = res.loss;
        te.dd_before = ls.dd0;
        te.fallback_direction = ls.fallback;

        if (ls.success) {
            CurvaturePair p;
            p.s.resize(n);
            p.y.resize(n);
            for (std::size_t j = 0; j < n; ++j) {
                p.s[j] = ls.x[j] - res.x[j];
                p.y[j] = ls.grad[j] - res.grad[j];
            }
            const double sy = dot(p.s, p.y);
            if (sy > 1e-10 * nrm2(p.s) * nrm2(p.y)) {
                p.rho = 1.0 / sy;
                pairs.push_back(std::move(p));
                if (pairs.size() > cfg.history) pairs.pop_front();
            } else {
                ++res.pairs_skipped;
            }
            res.x = std::move(ls.x);
            res.grad = std::move(ls.grad);
            res.loss = ls.f;
        } else {
            res.line_search_failed = true;
            te.line_search_failed = true;
            if (ls.f < res.loss) { // keep the best point the search found
                res.x = std::move(ls.x);
                res.grad = std::move(ls.grad);
                res.loss = ls.f;
            } else {
                ls.step = 0.0;
                ls.f = res.loss;
                ls.dd = ls.dd0;
            }
        }
        res.grad_norm = inf_norm(res.grad);
        te.step = ls.step;
        te.f_after = ls.f;
        te.dd_after = ls.dd;
        te.loss = res.loss;
        te.grad_norm = res.grad_norm;
        te.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                         .count();
        res.trace.push_back(te);
        ++res.iterations;
        if (cb) cb(te, res.x);
        if (te.line_search_failed) break;
    }
    if (res.grad_norm <= cfg.grad_tol) res.converged = true;
    return res;
}

} // namespace

MinimizeResult minimize(const Objective& f, std::vector<double> x0, const LbfgsConfig& cfg,
                        std::size_t epoch, const IterCallback& cb) {
    return minimize_impl(f, std::move(x0), cfg, epoch, cb, nullptr, nullptr);
}

MinimizeResult run_epochs(const Objective& f, std::vector<double> x0, std::size_t epochs,
                          std::size_t maxiter_per_epoch, LbfgsConfig cfg, bool carry_memory,
                          const EpochCallback& cb) {
    cfg.maxiter = maxiter_per_epoch;
    cfg.validate();
    if (epochs == 0 || maxiter_per_epoch == 0) {
        MinimizeResult res;
        res.x = std::move(x0);
        res.loss = f(res.x, res.grad);
        res.evals = 1;
        res.grad_norm = inf_norm(res.grad);
        res.converged = res.grad_norm <= cfg.grad_tol;
        return res;
    }

    if (carry_memory) {
        cfg.maxiter = epochs * maxiter_per_epoch;
        std::size_t epochs_reported = 0;
        const IterCallback boundary = [&](const TraceEntry& te, std::span<const double> x) {
            if (cb && te.iter % maxiter_per_epoch == 0) {
                cb(epochs_reported, x, te.loss, te.grad_norm);
                ++epochs_reported;
            }
        };
        MinimizeResult res = minimize_impl(f, std::move(x0), cfg, 0, boundary, nullptr, nullptr);
        for (auto& te : res.trace) {
            te.epoch = (te.iter - 1) / maxiter_per_epoch;
            te.iter = (te.iter - 1) % maxiter_per_epoch + 1;
        }
        if (cb)
            for (; epochs_reported < epochs; ++epochs_reported)
                cb(epochs_reported, res.x, res.loss, res.grad_norm);
        return res;
    }

    MinimizeResult total;
    total.x = std::move(x0);
    bool warm = false;
    double f_prev = 0.0;
    for (std::size_t e = 0; e < epochs; ++e) {
        MinimizeResult r = minimize_impl(f, std::move(total.x), cfg, e, {},
                                         warm ? &f_prev : nullptr, warm ? &total.grad : nullptr);
        total.x = std::move(r.x);
        total.grad = std::move(r.grad);
        total.loss = f_prev = r.loss;
        total.grad_norm = r.grad_norm;
        total.iterations += r.iterations;
        total.evals += r.evals;
        total.pairs_skipped += r.pairs_skipped;
        total.line_search_failed = total.line_search_failed || r.line_search_failed;
        total.converged = r.converged;
        total.trace.insert(total.trace.end(), r.trace.begin(), r.trace.end());
        warm = true;
        if (cb) cb(e, total.x, total.loss, total.grad_norm);
    }
    return total;
}

} // namespace glocalk
