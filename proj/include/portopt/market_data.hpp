#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "portopt/matrix.hpp"

namespace portopt {

/// Asset-return samples: one row per asset, one column per time sample.
struct ReturnsMatrix {
    Matrix values;                    // n x N, dimensionless return fractions
    std::vector<std::string> tickers; // size n
    bool demeaned = false;

    int assets() const { return static_cast<int>(values.rows()); }
    int samples() const { return static_cast<int>(values.cols()); }
};

struct ExpectedReturns {
    Vector mu; // per-period expected return per asset
};

enum class CovProvenance { sample, lowrank_svd, lowrank_ep };

const char* to_string(CovProvenance p);

struct CovarianceEstimate {
    Matrix matrix; // n x n symmetric
    CovProvenance provenance = CovProvenance::sample;
};

/// Checks symmetry (1e-12 absolute) and positive semidefiniteness
/// (min eigenvalue >= -1e-8 * max eigenvalue). Throws on violation.
void validate_covariance(const CovarianceEstimate& estimate);

/// Load a returns CSV: header line of tickers, then one line per time sample
/// with one numeric return per asset. LF or CRLF. Throws ParseError with the
/// offending row/column on malformed input.
ReturnsMatrix load_returns(std::istream& in);
ReturnsMatrix load_returns_file(const std::string& path);

/// Inverse of load_returns; numbers are written with 17 significant digits so
/// a save/load round trip is bit-identical.
void save_returns(const ReturnsMatrix& returns, std::ostream& out);
void save_returns_file(const ReturnsMatrix& returns, const std::string& path);

/// Subtract each row's sample mean. Idempotent.
ReturnsMatrix demean(const ReturnsMatrix& returns);

/// S = (1/N) X X^T. Requires demeaned input.
CovarianceEstimate sample_covariance(const ReturnsMatrix& returns);

/// Row means of a non-demeaned returns matrix.
ExpectedReturns mean_returns(const ReturnsMatrix& returns);

/// Draw N columns x = A s + e with s ~ N(0, latent_cov) and e_i ~
/// N(0, noise_std_i^2), all independent. Deterministic for a fixed seed.
/// Throws std::invalid_argument for inconsistent shapes or non-PSD latent_cov.
ReturnsMatrix generate_synthetic_returns(const Matrix& loadings, const Matrix& latent_cov,
                                         const Vector& noise_std, int sample_count,
                                         std::uint64_t seed);

/// Deterministic-factor variant used by generate_synthetic_returns and by
/// tests that need to inject explicit latents: x_t = A s_t + e_t with the
/// given latent columns.
ReturnsMatrix returns_from_latents(const Matrix& loadings, const Matrix& latents,
                                   const Vector& noise_std, std::uint64_t seed);

} // namespace portopt
