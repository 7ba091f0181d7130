#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <vector>

#include "portopt/market_data.hpp"
#include "portopt/matrix.hpp"

namespace portopt {

/// Numerically stable standard logistic 1/(1 + exp(-x)); strictly increasing,
/// output in (0, 1).
double logistic(double x);

/// Quadratic program encoded as couplings and biases:
///   H(w) = -1/2 w^T J w - m^T w
/// with J = -2 Sigma - 2 lambda1 mu mu^T - 2 lambda2 11^T and
/// m = 2 R lambda1 mu + 2 lambda2 1.
struct QpEncoding {
    Matrix coupling;      // J, n x n symmetric
    Vector bias;          // m
    double lambda1 = 1.0; // return-constraint penalty
    double lambda2 = 1.0; // budget-constraint penalty
    double target_return = 0.0;
};

QpEncoding encode_qp(const CovarianceEstimate& sigma, const ExpectedReturns& mu,
                     double target_return, double lambda1, double lambda2);

/// Penalized objective value H(w) for a weight vector.
double qp_objective(const QpEncoding& enc, const Vector& w);

/// p(t) = p0 * (1 - t / period), clamped at 0 for t > period.
/// period = +infinity means a constant schedule p(t) = p0.
struct AnnealSchedule {
    double p0 = 0.01;
    double period = 100.0;

    double at(double t) const {
        if (period == std::numeric_limits<double>::infinity()) return p0;
        if (t >= period) return 0.0;
        return p0 * (1.0 - t / period);
    }
};

struct SolverOptions {
    double dt = 1e-2;
    double total_time = 100.0; // integration horizon, >= schedule.period when finite
    AnnealSchedule schedule;
    double init_halfwidth = 0.1; // x(0) ~ uniform[-init_halfwidth, init_halfwidth]
    std::uint64_t seed = 0;
    int trace_stride = 0;          // 0 = keep no trace
    double convergence_tol = 1e-8; // on ||dx/dt||_inf once p has annealed to 0
};

struct HopfieldState {
    Vector potentials;  // x
    Vector activations; // v = g(x), elementwise
    double time = 0.0;
    double anneal_value = 0.0; // p at `time`
};

/// E = p * sum_i [v ln v + (1-v) ln(1-v)] - 1/2 v^T J v - m^T v, with the
/// convention 0 ln 0 = 0. Requires v = g(x).
double hopfield_energy(const HopfieldState& state, const QpEncoding& enc, double p);

struct TracePoint {
    double t;
    Vector potentials;
    Vector activations;
    double energy;
};

struct IntegrationResult {
    HopfieldState state;
    std::vector<TracePoint> trace;
    long steps = 0;
    bool converged = false; // ||dx/dt||_inf dropped below tol after annealing
};

/// Explicit fixed-step Euler integration of
///   dx_i/dt = -p(t) x_i + sum_j J_ij v_j + m_i,   v = g(x).
/// Deterministic for fixed options. Throws if the state becomes non-finite,
/// reporting the step.
IntegrationResult integrate(const QpEncoding& enc, const SolverOptions& opts);

/// Same, starting from the given potentials (used for warm starts).
IntegrationResult integrate_from(const QpEncoding& enc, const SolverOptions& opts,
                                 const Vector& initial_potentials);

/// CSV with columns t, E, v_1..v_n.
void write_trace_csv(std::ostream& out, const std::vector<TracePoint>& trace);

struct Portfolio {
    Vector weights;               // in [0, 1]^n
    double achieved_return = 0.0; // mu^T w
    double variance = 0.0;        // w^T Sigma w
    double return_residual = 0.0; // |mu^T w - R|
    double budget_residual = 0.0; // |1^T w - 1|
};

/// encode_qp + integrate; weights are the final activations.
Portfolio solve_portfolio(const CovarianceEstimate& sigma, const ExpectedReturns& mu,
                          double target_return, double lambda1, double lambda2,
                          const SolverOptions& opts);

/// Variant that also exposes the final integration result (trace, convergence)
/// and accepts an optional warm-start state.
Portfolio solve_portfolio(const CovarianceEstimate& sigma, const ExpectedReturns& mu,
                          double target_return, double lambda1, double lambda2,
                          const SolverOptions& opts, const Vector* warm_start,
                          IntegrationResult* result_out);

} // namespace portopt
