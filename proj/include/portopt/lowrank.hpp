#pragma once

#include <optional>
#include <string>

#include "portopt/market_data.hpp"
#include "portopt/matrix.hpp"

namespace portopt {

/// Eigendecomposition of a symmetric matrix, sorted by descending eigenvalue.
struct EigenPairs {
    Vector values;  // non-increasing
    Matrix vectors; // column k pairs with values[k]
};

struct LowRankResult {
    Matrix approx; // M = U Lambda_r U^T, symmetric, rank <= r
    EigenPairs pairs;
};

/// Rank-r approximation of a symmetric matrix from its top-r eigenpairs.
/// Negative eigenvalues among the retained r are zeroed so M stays PSD.
LowRankResult svd_lowrank(const CovarianceEstimate& sample_cov, int rank);

/// Psi_i = max(0, S_ii - M_ii).
Vector estimate_psi(const Matrix& sample_cov, const Matrix& lowrank);

/// Sigma = M + diag(Psi). Requires M PSD within tolerance.
CovarianceEstimate assemble_covariance(const Matrix& lowrank, const Vector& psi,
                                       CovProvenance provenance = CovProvenance::lowrank_svd);

/// || S - M - diag(Psi) ||_F^2.
double frobenius_gap(const Matrix& sample_cov, const Matrix& lowrank, const Vector& psi);

/// Latent factor model Sigma ~ A P A^T + diag(Psi).
struct FactorModel {
    Matrix loadings;   // A, n x r
    Matrix latent_cov; // P, r x r
    Vector psi;        // length n, nonnegative
    int rank = 0;
    std::optional<Matrix> encoder; // B, r x n; present on the autoencoder path
};

/// JSON round trip; numbers keep full double precision.
std::string factor_model_to_json(const FactorModel& model);
FactorModel factor_model_from_json(const std::string& text);

} // namespace portopt
