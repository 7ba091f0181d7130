// Serial-reference vs OpenMP kernel comparison, plus one end-to-end solver
// benchmark at each size. Run with --benchmark_filter=... to narrow.

#include <benchmark/benchmark.h>

#include <random>

#include "portopt/hopfield.hpp"
#include "portopt/kernels.hpp"

namespace {

using portopt::Matrix;
using portopt::Vector;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = gauss(rng);
    return m;
}

void bm_coupling_drive_serial(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    const Matrix coupling = random_matrix(n, n, 1);
    const Vector v = random_matrix(n, 1, 2);
    const Vector bias = random_matrix(n, 1, 3);
    Vector out(n);
    for (auto _ : state) {
        portopt::kernels::coupling_drive_serial(coupling, v, bias, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * n * n);
}

void bm_coupling_drive_omp(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    const Matrix coupling = random_matrix(n, n, 1);
    const Vector v = random_matrix(n, 1, 2);
    const Vector bias = random_matrix(n, 1, 3);
    Vector out(n);
    for (auto _ : state) {
        portopt::kernels::coupling_drive(coupling, v, bias, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * n * n);
}

void bm_scaled_gram_serial(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    const Matrix samples = random_matrix(n, 4 * n, 4);
    for (auto _ : state) {
        Matrix gram = portopt::kernels::scaled_gram_serial(samples);
        benchmark::DoNotOptimize(gram.data());
    }
}

void bm_scaled_gram_omp(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    const Matrix samples = random_matrix(n, 4 * n, 4);
    for (auto _ : state) {
        Matrix gram = portopt::kernels::scaled_gram(samples);
        benchmark::DoNotOptimize(gram.data());
    }
}

// Whole-solver benchmark: the coupling_drive kernel dominates each Euler step.
void bm_hopfield_solve(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    const Matrix g = random_matrix(n, 2 * n, 7);
    portopt::CovarianceEstimate sigma{portopt::kernels::scaled_gram(g),
                                      portopt::CovProvenance::sample};
    portopt::ExpectedReturns mu{random_matrix(n, 1, 8)};
    portopt::SolverOptions opts;
    opts.total_time = 10.0;
    opts.schedule.period = 10.0;
    for (auto _ : state) {
        auto portfolio = portopt::solve_portfolio(sigma, mu, 1.0, 1.0, 1.0, opts);
        benchmark::DoNotOptimize(portfolio.weights.data());
    }
}

} // namespace

BENCHMARK(bm_coupling_drive_serial)->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(bm_coupling_drive_omp)->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(bm_scaled_gram_serial)->Arg(100)->Arg(400);
BENCHMARK(bm_scaled_gram_omp)->Arg(100)->Arg(400);
BENCHMARK(bm_hopfield_solve)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
