#pragma once

#include "portopt/matrix.hpp"

namespace portopt::kernels {

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int thread_count();

// Dense inner loops shared by the solvers. Each kernel has a serial reference
// implementation and an OpenMP variant. The parallel versions partition work
// by output element, so every element is accumulated in the same order as the
// serial code and the two variants agree bitwise for any thread count.

/// out = coupling * v + bias.
void coupling_drive_serial(const Matrix& coupling, const Vector& v, const Vector& bias,
                           Vector& out);
void coupling_drive(const Matrix& coupling, const Vector& v, const Vector& bias, Vector& out);

/// (1/N) * X * X^T for an n-by-N sample matrix. The result is exactly
/// symmetric (mirrored from the upper triangle).
Matrix scaled_gram_serial(const Matrix& samples);
Matrix scaled_gram(const Matrix& samples);

} // namespace portopt::kernels
