#include "portopt/market_data.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "portopt/io_util.hpp"
#include "portopt/kernels.hpp"

namespace portopt {

const char* to_string(CovProvenance p) {
    switch (p) {
        case CovProvenance::sample: return "sample";
        case CovProvenance::lowrank_svd: return "lowrank-svd";
        case CovProvenance::lowrank_ep: return "lowrank-ep";
    }
    return "unknown";
}

void validate_covariance(const CovarianceEstimate& estimate) {
    const Matrix& s = estimate.matrix;
    if (s.rows() != s.cols()) throw std::invalid_argument("covariance matrix is not square");
    const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12) {
        throw std::invalid_argument("covariance asymmetry " + g17(asym) + " exceeds 1e-12");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw std::runtime_error("eigensolver failed");
    const double min_eig = eig.eigenvalues().minCoeff();
    const double max_eig = eig.eigenvalues().maxCoeff();
    if (min_eig < -1e-8 * std::max(max_eig, 0.0)) {
        throw std::invalid_argument("covariance not PSD: min eigenvalue " + g17(min_eig));
    }
}

ReturnsMatrix load_returns(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file: missing ticker header");
    auto tickers = split_csv_line(line);
    if (tickers.empty() || (tickers.size() == 1 && tickers[0].empty())) {
        throw ParseError("header row has no tickers");
    }
    const std::size_t n = tickers.size();

    std::vector<std::vector<double>> sample_rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (fields.size() != n) {
            throw ParseError("ragged row at line " + std::to_string(lineno) + ": expected " +
                             std::to_string(n) + " fields, got " + std::to_string(fields.size()));
        }
        std::vector<double> row(n);
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = parse_double_field(fields[j], lineno, j + 1);
            if (!std::isfinite(row[j])) {
                throw ParseError("non-finite value at row " + std::to_string(lineno) +
                                 ", column " + std::to_string(j + 1));
            }
        }
        sample_rows.push_back(std::move(row));
    }
    if (sample_rows.empty()) throw ParseError("no samples: file has a header but no data rows");

    ReturnsMatrix returns;
    returns.tickers = std::move(tickers);
    returns.values.resize(static_cast<Eigen::Index>(n),
                          static_cast<Eigen::Index>(sample_rows.size()));
    for (std::size_t t = 0; t < sample_rows.size(); ++t)
        for (std::size_t i = 0; i < n; ++i)
            returns.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) =
                sample_rows[t][i];
    returns.demeaned = false;
    return returns;
}

ReturnsMatrix load_returns_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    try {
        return load_returns(in);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void save_returns(const ReturnsMatrix& returns, std::ostream& out) {
    for (std::size_t i = 0; i < returns.tickers.size(); ++i) {
        if (i > 0) out << ',';
        out << returns.tickers[i];
    }
    out << '\n';
    for (Eigen::Index t = 0; t < returns.values.cols(); ++t) {
        for (Eigen::Index i = 0; i < returns.values.rows(); ++i) {
            if (i > 0) out << ',';
            out << g17(returns.values(i, t));
        }
        out << '\n';
    }
}

void save_returns_file(const ReturnsMatrix& returns, const std::string& path) {
    std::ostringstream out;
    save_returns(returns, out);
    write_file(path, out.str());
}

ReturnsMatrix demean(const ReturnsMatrix& returns) {
    ReturnsMatrix result = returns;
    for (Eigen::Index i = 0; i < result.values.rows(); ++i) {
        const double mean = result.values.row(i).mean();
        result.values.row(i).array() -= mean;
    }
    result.demeaned = true;
    return result;
}

CovarianceEstimate sample_covariance(const ReturnsMatrix& returns) {
    if (!returns.demeaned) {
        throw std::invalid_argument("sample_covariance: input must be demeaned first");
    }
    return CovarianceEstimate{kernels::scaled_gram(returns.values), CovProvenance::sample};
}

ExpectedReturns mean_returns(const ReturnsMatrix& returns) {
    if (returns.demeaned) {
        throw std::invalid_argument("mean_returns: input is demeaned, means carry no signal");
    }
    ExpectedReturns expected;
    expected.mu = returns.values.rowwise().mean();
    return expected;
}

namespace {
std::vector<std::string> default_tickers(Eigen::Index n) {
    std::vector<std::string> tickers;
    tickers.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) tickers.push_back("A" + std::to_string(i + 1));
    return tickers;
}
} // namespace

ReturnsMatrix generate_synthetic_returns(const Matrix& loadings, const Matrix& latent_cov,
                                         const Vector& noise_std, int sample_count,
                                         std::uint64_t seed) {
    const Eigen::Index n = loadings.rows();
    const Eigen::Index r = loadings.cols();
    if (latent_cov.rows() != r || latent_cov.cols() != r) {
        throw std::invalid_argument("latent covariance shape does not match loading columns");
    }
    if (noise_std.size() != n) {
        throw std::invalid_argument("noise_std length does not match asset count");
    }
    if (noise_std.minCoeff() < 0.0) throw std::invalid_argument("noise_std must be nonnegative");
    if (sample_count < 1) throw std::invalid_argument("sample_count must be >= 1");

    Eigen::SelfAdjointEigenSolver<Matrix> eig(latent_cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("eigensolver failed");
    const double max_eig = std::max(eig.eigenvalues().maxCoeff(), 0.0);
    if (eig.eigenvalues().minCoeff() < -1e-8 * std::max(max_eig, 1.0)) {
        throw std::invalid_argument("latent covariance is not PSD");
    }
    // latent_cov = F F^T with F = U sqrt(max(lambda, 0))
    Matrix factor = eig.eigenvectors() *
                    eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix latents(r, sample_count);
    for (int t = 0; t < sample_count; ++t) {
        Vector z(r);
        for (Eigen::Index k = 0; k < r; ++k) z[k] = gauss(rng);
        latents.col(t) = factor * z;
    }
    // Noise draws continue from the same stream, offset so that
    // returns_from_latents(seed) and this function agree on the noise.
    return returns_from_latents(loadings, latents, noise_std, rng());
}

ReturnsMatrix returns_from_latents(const Matrix& loadings, const Matrix& latents,
                                   const Vector& noise_std, std::uint64_t seed) {
    const Eigen::Index n = loadings.rows();
    if (latents.rows() != loadings.cols()) {
        throw std::invalid_argument("latent rows do not match loading columns");
    }
    if (noise_std.size() != n) {
        throw std::invalid_argument("noise_std length does not match asset count");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ReturnsMatrix returns;
    returns.tickers = default_tickers(n);
    returns.values.resize(n, latents.cols());
    for (Eigen::Index t = 0; t < latents.cols(); ++t) {
        returns.values.col(t) = loadings * latents.col(t);
        for (Eigen::Index i = 0; i < n; ++i) returns.values(i, t) += noise_std[i] * gauss(rng);
    }
    returns.demeaned = false;
    return returns;
}

} // namespace portopt
