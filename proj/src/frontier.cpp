#include "portopt/frontier.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "portopt/io_util.hpp"

namespace portopt {

double sharpe_ratio(const Vector& weights, const ExpectedReturns& mu,
                    const CovarianceEstimate& sigma) {
    const double variance = weights.dot(sigma.matrix * weights);
    if (!(variance > 0.0)) {
        throw std::invalid_argument("sharpe_ratio: portfolio variance must be positive");
    }
    return mu.mu.dot(weights) / std::sqrt(variance);
}

Portfolio two_asset_analytic(const ExpectedReturns& mu, const CovarianceEstimate& sigma,
                             double target_return) {
    if (mu.mu.size() != 2 || sigma.matrix.rows() != 2) {
        throw std::invalid_argument("two_asset_analytic: needs exactly two assets");
    }
    const double mu_a = mu.mu[0];
    const double mu_b = mu.mu[1];
    if (mu_a == mu_b) throw std::invalid_argument("two_asset_analytic: equal expected returns");
    const double lo = std::min(mu_a, mu_b);
    const double hi = std::max(mu_a, mu_b);
    if (target_return < lo || target_return > hi) {
        throw std::invalid_argument("two_asset_analytic: target return " + g17(target_return) +
                                    " infeasible without shorting (attainable [" + g17(lo) +
                                    ", " + g17(hi) + "])");
    }
    Portfolio p;
    const double w_b = (target_return - mu_a) / (mu_b - mu_a);
    p.weights.resize(2);
    p.weights << 1.0 - w_b, w_b;
    p.achieved_return = mu.mu.dot(p.weights);
    p.variance = p.weights.dot(sigma.matrix * p.weights);
    p.return_residual = std::abs(p.achieved_return - target_return);
    p.budget_residual = std::abs(p.weights.sum() - 1.0);
    return p;
}

Portfolio two_asset_min_variance(const ExpectedReturns& mu, const CovarianceEstimate& sigma) {
    const double saa = sigma.matrix(0, 0);
    const double sbb = sigma.matrix(1, 1);
    const double sab = sigma.matrix(0, 1);
    const double denom = saa + sbb - 2.0 * sab;
    if (denom == 0.0) throw std::invalid_argument("two_asset_min_variance: degenerate covariance");
    const double w_a = (sbb - sab) / denom;
    return two_asset_analytic(mu, sigma, mu.mu[0] * w_a + mu.mu[1] * (1.0 - w_a));
}

FrontierCurve sweep_frontier(const CovarianceEstimate& sigma, const ExpectedReturns& mu,
                             double r_min, double r_max, int steps, const SolverOptions& opts,
                             double lambda1, double lambda2, bool warm_start) {
    if (steps < 2) throw std::invalid_argument("sweep_frontier: steps must be >= 2");
    if (!(r_min < r_max)) throw std::invalid_argument("sweep_frontier: need r_min < r_max");

    FrontierCurve curve;
    curve.points.resize(steps);
    const double dr = (r_max - r_min) / (steps - 1);

    auto solve_point = [&](int k, const Vector* start) {
        FrontierPoint& point = curve.points[k];
        point.target_return = r_min + k * dr;
        try {
            IntegrationResult res;
            point.portfolio = solve_portfolio(sigma, mu, point.target_return, lambda1, lambda2,
                                              opts, start, &res);
            point.sharpe = point.portfolio.variance > 0.0
                               ? sharpe_ratio(point.portfolio.weights, mu, sigma)
                               : 0.0;
            point.solved = true;
            return res.state.potentials;
        } catch (const std::exception& e) {
            point.solved = false;
            point.error = e.what();
            return Vector{};
        }
    };

    if (warm_start) {
        Vector previous;
        for (int k = 0; k < steps; ++k) {
            Vector final_x = solve_point(k, previous.size() > 0 ? &previous : nullptr);
            if (final_x.size() > 0) previous = std::move(final_x);
        }
    } else {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
        for (int k = 0; k < steps; ++k) solve_point(k, nullptr);
    }
    return curve;
}

namespace {
const FrontierPoint* pick_point(const FrontierCurve& curve, bool (*better)(const FrontierPoint&,
                                                                           const FrontierPoint&),
                                const char* what) {
    const FrontierPoint* best = nullptr;
    for (const auto& point : curve.points) {
        if (!point.solved) continue;
        // Points are ordered by R, so strict comparison yields the smaller-R tie-break.
        if (!best || better(point, *best)) best = &point;
    }
    if (!best) throw std::invalid_argument(std::string(what) + ": curve has no solved points");
    return best;
}
} // namespace

const FrontierPoint& min_variance_point(const FrontierCurve& curve) {
    return *pick_point(
        curve,
        [](const FrontierPoint& a, const FrontierPoint& b) {
            return a.portfolio.variance < b.portfolio.variance;
        },
        "min_variance_point");
}

const FrontierPoint& max_sharpe_point(const FrontierCurve& curve) {
    return *pick_point(
        curve,
        [](const FrontierPoint& a, const FrontierPoint& b) { return a.sharpe > b.sharpe; },
        "max_sharpe_point");
}

void write_frontier_csv(std::ostream& out, const FrontierCurve& curve) {
    Eigen::Index n = 0;
    for (const auto& point : curve.points) {
        if (point.solved) {
            n = point.portfolio.weights.size();
            break;
        }
    }
    out << "R,variance,achieved_return,sharpe,return_residual,budget_residual";
    for (Eigen::Index i = 0; i < n; ++i) out << ",w_" << (i + 1);
    out << '\n';
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& point : curve.points) {
        out << g17(point.target_return);
        if (point.solved) {
            out << ',' << g17(point.portfolio.variance) << ',' << g17(point.portfolio.achieved_return)
                << ',' << g17(point.sharpe) << ',' << g17(point.portfolio.return_residual) << ','
                << g17(point.portfolio.budget_residual);
            for (Eigen::Index i = 0; i < n; ++i) out << ',' << g17(point.portfolio.weights[i]);
        } else {
            for (Eigen::Index i = 0; i < 5 + n; ++i) out << ',' << g17(nan);
        }
        out << '\n';
    }
}

} // namespace portopt
