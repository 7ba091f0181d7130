#include "portopt/lowrank.hpp"

#include <algorithm>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "portopt/io_util.hpp"

namespace portopt {

LowRankResult svd_lowrank(const CovarianceEstimate& sample_cov, int rank) {
    const Matrix& s = sample_cov.matrix;
    const Eigen::Index n = s.rows();
    if (rank < 1 || rank > n) throw std::invalid_argument("svd_lowrank: need 1 <= rank <= n");
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw std::invalid_argument("svd_lowrank: input matrix is not symmetric");
    }

    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    if (eig.info() != Eigen::Success) throw std::runtime_error("svd_lowrank: eigensolver failed");

    // Eigen returns eigenvalues ascending; flip to descending.
    LowRankResult result;
    result.pairs.values = eig.eigenvalues().reverse();
    result.pairs.vectors = eig.eigenvectors().rowwise().reverse();

    Vector kept = Vector::Zero(n);
    for (int k = 0; k < rank; ++k) kept[k] = std::max(result.pairs.values[k], 0.0);
    result.approx = result.pairs.vectors * kept.asDiagonal() * result.pairs.vectors.transpose();
    result.approx = 0.5 * (result.approx + result.approx.transpose()).eval();
    return result;
}

Vector estimate_psi(const Matrix& sample_cov, const Matrix& lowrank) {
    if (sample_cov.rows() != lowrank.rows() || sample_cov.cols() != lowrank.cols()) {
        throw std::invalid_argument("estimate_psi: shape mismatch");
    }
    return (sample_cov.diagonal() - lowrank.diagonal()).cwiseMax(0.0);
}

CovarianceEstimate assemble_covariance(const Matrix& lowrank, const Vector& psi,
                                       CovProvenance provenance) {
    if (psi.size() != lowrank.rows()) throw std::invalid_argument("assemble_covariance: shape mismatch");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(lowrank, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw std::runtime_error("assemble_covariance: eigensolver failed");
    const double min_eig = eig.eigenvalues().minCoeff();
    const double max_eig = std::max(eig.eigenvalues().maxCoeff(), 0.0);
    if (min_eig < -1e-8 * std::max(max_eig, 1.0)) {
        throw std::invalid_argument("assemble_covariance: low-rank part is not PSD (min eigenvalue " +
                                    g17(min_eig) + ")");
    }
    CovarianceEstimate estimate;
    estimate.matrix = lowrank;
    estimate.matrix.diagonal() += psi;
    estimate.provenance = provenance;
    return estimate;
}

double frobenius_gap(const Matrix& sample_cov, const Matrix& lowrank, const Vector& psi) {
    if (sample_cov.rows() != lowrank.rows() || psi.size() != lowrank.rows()) {
        throw std::invalid_argument("frobenius_gap: shape mismatch");
    }
    Matrix residual = sample_cov - lowrank;
    residual.diagonal() -= psi;
    return residual.squaredNorm();
}

namespace {
nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const nlohmann::json& rows) {
    if (!rows.is_array() || rows.empty()) throw ParseError("factor model: expected matrix rows");
    const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index c = static_cast<Eigen::Index>(rows.front().size());
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != c) throw ParseError("factor model: ragged matrix");
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
    }
    return m;
}
} // namespace

std::string factor_model_to_json(const FactorModel& model) {
    nlohmann::json doc;
    doc["r"] = model.rank;
    doc["A"] = matrix_to_json(model.loadings); // row-major rows
    doc["P"] = matrix_to_json(model.latent_cov);
    doc["Psi"] = std::vector<double>(model.psi.data(), model.psi.data() + model.psi.size());
    if (model.encoder) doc["B"] = matrix_to_json(*model.encoder);
    return doc.dump(2) + "\n";
}

FactorModel factor_model_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("factor model JSON: ") + e.what());
    }
    FactorModel model;
    try {
        model.rank = doc.at("r").get<int>();
        model.loadings = matrix_from_json(doc.at("A"));
        model.latent_cov = matrix_from_json(doc.at("P"));
        auto psi = doc.at("Psi").get<std::vector<double>>();
        model.psi = Eigen::Map<const Vector>(psi.data(), static_cast<Eigen::Index>(psi.size()));
        if (doc.contains("B")) model.encoder = matrix_from_json(doc.at("B"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("factor model JSON: ") + e.what());
    }
    return model;
}

} // namespace portopt
