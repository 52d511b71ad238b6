#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "glocalk/errors.hpp"

namespace glocalk {

// Evaluates the objective at x, fills grad (resizing if needed), returns f(x).
using Objective = std::function<double(std::span<const double>, std::vector<double>&)>;

struct LbfgsConfig {
    std::size_t history = 10;
    std::size_t maxiter = 50;
    double grad_tol = 1e-5; // max-norm early exit
    double c1 = 1e-4;
    double c2 = 0.9;
    std::size_t max_line_search_steps = 20;

    void validate() const; // ConfigError on violation
};

// One optimizer step. f_before/dd_before are phi(0), phi'(0) of the line
// search and f_after/dd_after the same at the accepted step, so the strong
// Wolfe inequalities can be re-checked from the trace alone.
struct TraceEntry {
    std::size_t epoch = 0;
    std::size_t iter = 0; // 1-based within the minimize call
    double loss = 0.0;
    double grad_norm = 0.0; // max-norm
    double step = 0.0;
    double wall_ms = 0.0;
    double f_before = 0.0;
    double dd_before = 0.0;
    double f_after = 0.0;
    double dd_after = 0.0;
    bool line_search_failed = false;
    bool fallback_direction = false;
};

struct MinimizeResult {
    std::vector<double> x;
    std::vector<double> grad;
    double loss = 0.0;
    double grad_norm = 0.0; // max-norm
    std::size_t iterations = 0;
    std::size_t evals = 0;
    std::size_t pairs_skipped = 0;
    bool converged = false;          // grad_tol reached
    bool line_search_failed = false; // a search gave up; best point kept
    std::vector<TraceEntry> trace;
};

struct LineSearchResult {
    std::vector<double> x;
    std::vector<double> grad;
    double f = 0.0;
    double step = 0.0;
    double dd0 = 0.0; // phi'(0) along the direction actually searched
    double dd = 0.0;  // phi'(step)
    std::size_t evals = 0;
    bool success = false;
    bool fallback = false; // searched along -g instead of the given direction
};

// Bracketing + zoom with cubic interpolation. A non-descent direction falls
// back to -g0 (flagged and logged); exhausting max_line_search_steps returns
// the best point seen with success=false.
LineSearchResult strong_wolfe_line_search(const Objective& f, std::span<const double> x,
                                          std::span<const double> direction, double f0,
                                          std::span<const double> g0, double initial_step,
                                          const LbfgsConfig& cfg);

using IterCallback = std::function<void(const TraceEntry&, std::span<const double>)>;

// L-BFGS with two-loop recursion. Runs at most cfg.maxiter iterations, stops
// early once the gradient max-norm drops to cfg.grad_tol. Loss is
// non-increasing across trace entries; a line-search failure keeps the best
// point and ends the run with a flagged entry.
MinimizeResult minimize(const Objective& f, std::vector<double> x0, const LbfgsConfig& cfg,
                        std::size_t epoch = 0, const IterCallback& cb = {});

using EpochCallback = std::function<void(std::size_t epoch, std::span<const double> x,
                                         double loss, double grad_norm)>;

// minimize() `epochs` times with maxiter_per_epoch iterations each,
// warm-starting from the previous result and resetting the curvature buffer
// between epochs. carry_memory instead keeps one continuous run and fires the
// callback at epoch boundaries.
MinimizeResult run_epochs(const Objective& f, std::vector<double> x0, std::size_t epochs,
                          std::size_t maxiter_per_epoch, LbfgsConfig cfg,
                          bool carry_memory = false, const EpochCallback& cb = {});

} // namespace glocalk
