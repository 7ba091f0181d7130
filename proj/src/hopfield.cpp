#include "portopt/hopfield.hpp"

#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

#include "portopt/io_util.hpp"
#include "portopt/kernels.hpp"

namespace portopt {

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

QpEncoding encode_qp(const CovarianceEstimate& sigma, const ExpectedReturns& mu,
                     double target_return, double lambda1, double lambda2) {
    const Eigen::Index n = sigma.matrix.rows();
    if (mu.mu.size() != n) {
        throw std::invalid_argument("encode_qp: mu length does not match covariance dimension");
    }
    if (lambda1 < 0.0 || lambda2 < 0.0) {
        throw std::invalid_argument("encode_qp: penalty scalars must be nonnegative");
    }
    QpEncoding enc;
    enc.coupling = -2.0 * sigma.matrix - 2.0 * lambda1 * (mu.mu * mu.mu.transpose()) -
                   2.0 * lambda2 * Matrix::Ones(n, n);
    enc.coupling = 0.5 * (enc.coupling + enc.coupling.transpose()).eval();
    enc.bias = 2.0 * target_return * lambda1 * mu.mu + 2.0 * lambda2 * Vector::Ones(n);
    enc.lambda1 = lambda1;
    enc.lambda2 = lambda2;
    enc.target_return = target_return;
    return enc;
}

double qp_objective(const QpEncoding& enc, const Vector& w) {
    return -0.5 * w.dot(enc.coupling * w) - enc.bias.dot(w);
}

namespace {
inline double binary_entropy_term(double v) {
    auto xlogx = [](double u) { return u > 0.0 ? u * std::log(u) : 0.0; };
    return xlogx(v) + xlogx(1.0 - v);
}
} // namespace

double hopfield_energy(const HopfieldState& state, const QpEncoding& enc, double p) {
    double entropy = 0.0;
    for (Eigen::Index i = 0; i < state.activations.size(); ++i) {
        entropy += binary_entropy_term(state.activations[i]);
    }
    return p * entropy + qp_objective(enc, state.activations);
}

namespace {
void validate_options(const SolverOptions& opts) {
    if (!(opts.dt > 0.0)) throw std::invalid_argument("solver: dt must be positive");
    if (!(opts.schedule.period > 0.0)) throw std::invalid_argument("solver: period must be positive");
    if (opts.schedule.p0 < 0.0) throw std::invalid_argument("solver: p0 must be nonnegative");
    if (std::isfinite(opts.schedule.period) && opts.total_time < opts.schedule.period) {
        throw std::invalid_argument("solver: total_time must cover the annealing period");
    }
}

Vector seeded_initial_state(Eigen::Index n, const SolverOptions& opts) {
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> uniform(-opts.init_halfwidth, opts.init_halfwidth);
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = uniform(rng);
    return x;
}
} // namespace

IntegrationResult integrate(const QpEncoding& enc, const SolverOptions& opts) {
    validate_options(opts);
    return integrate_from(enc, opts, seeded_initial_state(enc.coupling.rows(), opts));
}

IntegrationResult integrate_from(const QpEncoding& enc, const SolverOptions& opts,
                                 const Vector& initial_potentials) {
    validate_options(opts);
    const Eigen::Index n = enc.coupling.rows();
    if (initial_potentials.size() != n) {
        throw std::invalid_argument("integrate: initial state has wrong dimension");
    }

    IntegrationResult result;
    Vector x = initial_potentials;
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = logistic(x[i]);
    Vector drive(n);

    const long max_steps = static_cast<long>(std::ceil(opts.total_time / opts.dt - 0.5e-9));
    auto record = [&](long step, double p) {
        if (opts.trace_stride <= 0) return;
        if (step % opts.trace_stride != 0 && step != max_steps) return;
        HopfieldState s{x, v, step * opts.dt, p};
        result.trace.push_back({s.time, x, v, hopfield_energy(s, enc, p)});
    };

    long step = 0;
    record(0, opts.schedule.at(0.0));
    for (; step < max_steps; ++step) {
        const double t = step * opts.dt;
        const double p = opts.schedule.at(t);
        kernels::coupling_drive(enc.coupling, v, enc.bias, drive);
        double rate_max = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double rate = drive[i] - p * x[i];
            rate_max = std::max(rate_max, std::abs(rate));
            x[i] += opts.dt * rate;
            v[i] = logistic(x[i]);
        }
        if (!x.allFinite()) {
            throw std::runtime_error("integrate: non-finite state at step " +
                                     std::to_string(step + 1) + " (t = " + g17(t + opts.dt) + ")");
        }
        record(step + 1, opts.schedule.at((step + 1) * opts.dt));
        if (p == 0.0 && rate_max < opts.convergence_tol) {
            result.converged = true;
            ++step;
            break;
        }
    }

    result.steps = step;
    result.state.potentials = std::move(x);
    result.state.activations = std::move(v);
    result.state.time = step * opts.dt;
    result.state.anneal_value = opts.schedule.at(result.state.time);
    return result;
}

void write_trace_csv(std::ostream& out, const std::vector<TracePoint>& trace) {
    out << "t,E";
    const Eigen::Index n = trace.empty() ? 0 : trace.front().activations.size();
    for (Eigen::Index i = 0; i < n; ++i) out << ",v_" << (i + 1);
    out << '\n';
    for (const auto& point : trace) {
        out << g17(point.t) << ',' << g17(point.energy);
        for (Eigen::Index i = 0; i < n; ++i) out << ',' << g17(point.activations[i]);
        out << '\n';
    }
}

Portfolio solve_portfolio(const CovarianceEstimate& sigma, const ExpectedReturns& mu,
                          double target_return, double lambda1, double lambda2,
                          const SolverOptions& opts) {
    return solve_portfolio(sigma, mu, target_return, lambda1, lambda2, opts, nullptr, nullptr);
}

Portfolio solve_portfolio(const CovarianceEstimate& sigma, const ExpectedReturns& mu,
                          double target_return, double lambda1, double lambda2,
                          const SolverOptions& opts, const Vector* warm_start,
                          IntegrationResult* result_out) {
    const QpEncoding enc = encode_qp(sigma, mu, target_return, lambda1, lambda2);
    IntegrationResult res = warm_start ? integrate_from(enc, opts, *warm_start)
                                       : integrate(enc, opts);
    Portfolio portfolio;
    portfolio.weights = res.state.activations;
    portfolio.achieved_return = mu.mu.dot(portfolio.weights);
    portfolio.variance = portfolio.weights.dot(sigma.matrix * portfolio.weights);
    portfolio.return_residual = std::abs(portfolio.achieved_return - target_return);
    portfolio.budget_residual = std::abs(portfolio.weights.sum() - 1.0);
    if (result_out) *result_out = std::move(res);
    return portfolio;
}

} // namespace portopt
