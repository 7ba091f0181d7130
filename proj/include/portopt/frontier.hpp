#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "portopt/hopfield.hpp"

namespace portopt {

struct FrontierPoint {
    double target_return = 0.0; // R
    Portfolio portfolio;
    double sharpe = 0.0;
    bool solved = false;
    std::string error; // diagnostic for failed points
};

/// Points ordered by strictly increasing target return.
struct FrontierCurve {
    std::vector<FrontierPoint> points;
};

/// S_r = mu^T w / sqrt(w^T Sigma w). Throws on nonpositive variance.
double sharpe_ratio(const Vector& weights, const ExpectedReturns& mu,
                    const CovarianceEstimate& sigma);

/// Closed-form two-asset portfolio with both equality constraints binding:
/// w_B = (R - mu_A) / (mu_B - mu_A). Requires mu_A != mu_B and R within
/// [min mu, max mu] (otherwise infeasible under the long-only box).
Portfolio two_asset_analytic(const ExpectedReturns& mu, const CovarianceEstimate& sigma,
                             double target_return);

/// Two-asset minimum-variance weights/return/variance in closed form.
Portfolio two_asset_min_variance(const ExpectedReturns& mu, const CovarianceEstimate& sigma);

/// Solve one Hopfield QP per equally spaced target return in
/// [r_min, r_max]. With warm_start each solve starts from the previous
/// point's potentials (sequential); without it points are independent and
/// may be solved in parallel. Per-point failures are flagged on the point
/// and the sweep continues.
FrontierCurve sweep_frontier(const CovarianceEstimate& sigma, const ExpectedReturns& mu,
                             double r_min, double r_max, int steps, const SolverOptions& opts,
                             double lambda1, double lambda2, bool warm_start = true);

/// Solved point with least variance; ties broken by smaller R. Throws if the
/// curve has no solved points.
const FrontierPoint& min_variance_point(const FrontierCurve& curve);

/// Solved point with maximal Sharpe ratio; ties broken by smaller R.
const FrontierPoint& max_sharpe_point(const FrontierCurve& curve);

/// Columns R, variance, achieved_return, sharpe, return_residual,
/// budget_residual, w_1..w_n. Failed points carry nan fields.
void write_frontier_csv(std::ostream& out, const FrontierCurve& curve);

} // namespace portopt
