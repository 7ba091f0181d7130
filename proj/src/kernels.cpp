#include "portopt/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace portopt::kernels {

namespace {
// Below this size the fork/join overhead dominates; the serial path is used.
constexpr Eigen::Index kParallelCutoff = 64;

inline double row_dot(const Matrix& m, Eigen::Index i, const Vector& v, double acc) {
    const Eigen::Index n = m.cols();
    for (Eigen::Index j = 0; j < n; ++j) acc += m(i, j) * v[j];
    return acc;
}

inline double sample_dot(const Matrix& x, Eigen::Index i, Eigen::Index j) {
    const Eigen::Index n = x.cols();
    double acc = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) acc += x(i, t) * x(j, t);
    return acc;
}
} // namespace

int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void coupling_drive_serial(const Matrix& coupling, const Vector& v, const Vector& bias,
                           Vector& out) {
    const Eigen::Index n = coupling.rows();
    out.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = row_dot(coupling, i, v, bias[i]);
}

void coupling_drive(const Matrix& coupling, const Vector& v, const Vector& bias, Vector& out) {
    const Eigen::Index n = coupling.rows();
    if (n < kParallelCutoff) {
        coupling_drive_serial(coupling, v, bias, out);
        return;
    }
    out.resize(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (Eigen::Index i = 0; i < n; ++i) out[i] = row_dot(coupling, i, v, bias[i]);
}

Matrix scaled_gram_serial(const Matrix& samples) {
    const Eigen::Index n = samples.rows();
    const double inv_count = 1.0 / static_cast<double>(samples.cols());
    Matrix gram(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) {
            const double value = sample_dot(samples, i, j) * inv_count;
            gram(i, j) = value;
            gram(j, i) = value;
        }
    }
    return gram;
}

Matrix scaled_gram(const Matrix& samples) {
    const Eigen::Index n = samples.rows();
    if (n < kParallelCutoff) return scaled_gram_serial(samples);
    const double inv_count = 1.0 / static_cast<double>(samples.cols());
    Matrix gram(n, n);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4)
#endif
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) {
            const double value = sample_dot(samples, i, j) * inv_count;
            gram(i, j) = value;
            gram(j, i) = value;
        }
    }
    return gram;
}

} // namespace portopt::kernels
