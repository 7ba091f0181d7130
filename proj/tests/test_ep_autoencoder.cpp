#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "oracles.hpp"
#include "portopt/ep_autoencoder.hpp"

using namespace portopt;

namespace {

EpConfig fast_config() {
    EpConfig cfg;
    cfg.relax_dt = 0.5;
    cfg.relax_steps = 4000;
    return cfg;
}

/// Decoder-style subnet with an explicit input-output weight block W
/// (W(i_in, j_out)), optional bias column all zero.
EpSubnet subnet_from_weights(const Matrix& weights, bool bias) {
    EpSubnet net;
    net.input_count = static_cast<int>(weights.rows());
    net.has_bias = bias;
    net.output_count = static_cast<int>(weights.cols());
    const int total = net.total_units();
    net.coupling = Matrix::Zero(total, total);
    for (int i = 0; i < net.input_count; ++i) {
        for (int j = 0; j < net.output_count; ++j) {
            net.coupling(i, net.output_start() + j) = weights(i, j);
            net.coupling(net.output_start() + j, i) = weights(i, j);
        }
    }
    return net;
}

Matrix orthonormal_columns(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    const Matrix g = oracles::random_matrix(rows, cols, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    return Matrix(qr.householderQ()).leftCols(cols);
}

/// Analytic loss gradient with respect to the decoder's input-output block:
/// dC/dW(i_in, j_out) = -(y_j - xhat_j) * v_i at the free fixed point.
Matrix analytic_decoder_gradient(const EpSubnet& decoder, const Vector& latent, const Vector& target,
                                 const EpConfig& cfg) {
    const PhaseResult free_fp = free_phase(decoder, latent, cfg);
    const Vector xhat = free_fp.state.tail(decoder.output_count);
    Matrix grad(decoder.clamped_count(), decoder.output_count);
    for (int i = 0; i < decoder.clamped_count(); ++i) {
        const double v_i = clipped_linear(free_fp.state[i], cfg.clip);
        for (int j = 0; j < decoder.output_count; ++j) {
            grad(i, j) = -(target[j] - xhat[j]) * v_i;
        }
    }
    return grad;
}

/// The matching block of an EP update matrix.
Matrix update_block(const EpSubnet& net, const Matrix& delta) {
    return delta.block(0, net.output_start(), net.clamped_count(), net.output_count);
}

} // namespace

TEST_CASE("clipped_linear branches and odd symmetry") {
    CHECK(clipped_linear(0.5, 1.0) == 0.5);
    CHECK(clipped_linear(3.0, 1.0) == 1.0);
    CHECK(clipped_linear(-3.0, 1.0) == -1.0);
    for (double x = -4.0; x <= 4.0; x += 0.37) {
        CHECK(clipped_linear(-x, 1.5) == -clipped_linear(x, 1.5));
    }
}

TEST_CASE("free_phase: zero couplings relax every free unit to zero") {
    std::mt19937_64 rng(61);
    EpSubnet net = subnet_from_weights(Matrix::Zero(3, 4), true);
    const Vector input = oracles::random_matrix(3, 1, rng);
    Vector init = oracles::random_matrix(4, 1, rng);
    const PhaseResult result = free_phase(net, input, fast_config(), &init);
    CHECK(result.converged);
    CHECK(result.outputs(net).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("free_phase: fixed seed and inputs give a bit-identical fixed point") {
    std::mt19937_64 rng(62);
    const Matrix weights = oracles::random_matrix(4, 3, rng);
    EpSubnet net = subnet_from_weights(weights, true);
    const Vector input = oracles::random_matrix(4, 1, rng);
    const PhaseResult a = free_phase(net, input, fast_config());
    const PhaseResult b = free_phase(net, input, fast_config());
    CHECK(std::memcmp(a.state.data(), b.state.data(), sizeof(double) * a.state.size()) == 0);
}

TEST_CASE("free_phase with an idempotent lateral block matches the matrix-exponential limit") {
    std::mt19937_64 rng(63);
    const int m = 6, r = 3;
    const Matrix a = oracles::random_matrix(m, r, rng);
    const Matrix projection = a * (a.transpose() * a).inverse() * a.transpose();

    // One clamped unit drives the free block through a column c with P c = 0,
    // so the clamped drive lives in the decaying eigenspace.
    Vector c = oracles::random_matrix(m, 1, rng);
    c = (Matrix::Identity(m, m) - projection) * c;

    EpSubnet net;
    net.input_count = 1;
    net.has_bias = false;
    net.output_count = m;
    net.coupling = Matrix::Zero(m + 1, m + 1);
    net.coupling.block(1, 1, m, m) = 0.5 * (projection + projection.transpose());
    net.coupling.block(1, 0, m, 1) = c;
    net.coupling.block(0, 1, 1, m) = c.transpose();

    Vector init = oracles::random_matrix(m, 1, rng);
    Vector input = Vector::Ones(1);

    EpConfig cfg = fast_config();
    cfg.relax_dt = 0.05;
    cfg.relax_steps = 20000;
    const PhaseResult result = free_phase(net, input, cfg, &init);

    SUBCASE("drive-free fixed point equals the matrix-exponential limit") {
        EpSubnet bare = net;
        bare.coupling.block(1, 0, m, 1).setZero();
        bare.coupling.block(0, 1, 1, m).setZero();
        const PhaseResult homogeneous = free_phase(bare, input, cfg, &init);
        const Matrix sym = bare.coupling.block(1, 1, m, m);
        const Vector limit = oracles::expm((sym - Matrix::Identity(m, m)) * 60.0) * init;
        CHECK((homogeneous.outputs(bare) - limit).cwiseAbs().maxCoeff() <= 1e-6);
    }

    SUBCASE("with the clamped drive the fixed point is J x(0) plus the drive") {
        CHECK(((Matrix::Identity(m, m) - projection) * c - c).cwiseAbs().maxCoeff() <= 1e-12);
        const Vector expected = projection * init + c;
        CHECK((result.outputs(net) - expected).cwiseAbs().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("clamped_phase with beta = 0 behaves exactly as free_phase") {
    std::mt19937_64 rng(64);
    const Matrix weights = oracles::random_matrix(3, 5, rng);
    EpSubnet net = subnet_from_weights(weights, true);
    const Vector input = oracles::random_matrix(3, 1, rng);
    EpConfig cfg = fast_config();
    cfg.beta = 0.0;
    const PhaseResult free_fp = free_phase(net, input, cfg);
    const Vector target = oracles::random_matrix(5, 1, rng);
    const PhaseResult clamped =
        clamped_phase(net, input, target, 0.0, cfg, Vector::Zero(net.total_units()));
    CHECK(std::memcmp(free_fp.state.data(), clamped.state.data(),
                      sizeof(double) * free_fp.state.size()) == 0);
}

TEST_CASE("clamped_phase: nudging toward the free-phase output leaves the fixed point") {
    std::mt19937_64 rng(65);
    const Matrix weights = oracles::random_matrix(4, 4, rng);
    EpSubnet net = subnet_from_weights(weights, true);
    const Vector input = oracles::random_matrix(4, 1, rng);
    const EpConfig cfg = fast_config();
    const PhaseResult free_fp = free_phase(net, input, cfg);
    const Vector target = free_fp.state.tail(4);
    const PhaseResult nudged = clamped_phase(net, input, target, cfg.beta, cfg, free_fp.state);
    CHECK((nudged.state - free_fp.state).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("clamped_phase displacement is first order in beta") {
    std::mt19937_64 rng(66);
    const Matrix weights = oracles::random_matrix(5, 4, rng);
    EpSubnet net = subnet_from_weights(weights, true);
    const Vector input = oracles::random_matrix(5, 1, rng);
    const Vector target = oracles::random_matrix(4, 1, rng);

    EpConfig cfg = fast_config();
    const PhaseResult free_fp = free_phase(net, input, cfg);

    cfg.beta = 1e-3;
    const PhaseResult full =
        clamped_phase(net, input, target, cfg.beta, cfg, free_fp.state);
    cfg.beta = 5e-4;
    const PhaseResult half =
        clamped_phase(net, input, target, cfg.beta, cfg, free_fp.state);

    const double d_full = (full.state - free_fp.state).norm();
    const double d_half = (half.state - free_fp.state).norm();
    CHECK(d_half == doctest::Approx(0.5 * d_full).epsilon(0.2));
}

TEST_CASE("relaxation raises an instability error naming the phase") {
    Matrix weights(1, 1);
    weights << 50.0;
    EpSubnet net = subnet_from_weights(weights, false);
    EpConfig cfg = fast_config();
    cfg.relax_dt = 0.05;
    Vector input = Vector::Constant(1, 10.0); // drive 500 >> 10 * clip
    CHECK_THROWS_WITH_AS(free_phase(net, input, cfg), doctest::Contains("free"),
                         std::runtime_error);
}

TEST_CASE("clipping keeps runaway relaxations bounded") {
    std::mt19937_64 rng(67);
    // Spectral radius > 1: the linear dynamics would grow, the clip holds it.
    const Matrix weights = 3.0 * orthonormal_columns(4, 4, rng);
    EpSubnet net = subnet_from_weights(weights, false);
    EpConfig cfg = fast_config();
    cfg.clip = 1.0;
    cfg.relax_dt = 0.05;
    cfg.relax_steps = 5000;
    const Vector input = oracles::random_matrix(4, 1, rng);
    const PhaseResult result = free_phase(net, input, cfg);
    const double row_norm = net.coupling.cwiseAbs().rowwise().sum().maxCoeff();
    CHECK(result.state.tail(4).cwiseAbs().maxCoeff() <= cfg.clip * (1.0 + row_norm));
}

TEST_CASE("ep_weight_update: identical states give a zero update") {
    std::mt19937_64 rng(68);
    EpSubnet net = subnet_from_weights(oracles::random_matrix(3, 2, rng), true);
    const Vector state = oracles::random_matrix(net.total_units(), 1, rng);
    CHECK(ep_weight_update(net, state, state, fast_config()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ep_weight_update: two-unit arithmetic gives eta / beta") {
    EpSubnet net = subnet_from_weights(Matrix::Zero(1, 1), false);
    EpConfig cfg = fast_config();
    cfg.eta = 0.02;
    cfg.beta = 1e-3;
    Vector plus(2), minus(2);
    plus << 1.0, 1.0;
    minus << 1.0, -1.0;
    const Matrix delta = ep_weight_update(net, plus, minus, cfg);
    CHECK(delta(0, 1) == doctest::Approx(cfg.eta / cfg.beta).epsilon(1e-12));
    CHECK(delta(1, 0) == delta(0, 1));
    CHECK(delta(0, 0) == 0.0);
    CHECK(delta(1, 1) == 0.0);
}

TEST_CASE("EP decoder update matches the analytic gradient (second-order in beta)") {
    std::mt19937_64 rng(69);
    const int n = 10, r = 3;
    EpNetwork net = make_autoencoder(n, r, 71);
    const Vector x = oracles::random_matrix(n, 1, rng);

    EpConfig cfg = fast_config();
    cfg.eta = 1.0; // direction comparison, undamped
    auto ep_update_for_beta = [&](double beta) {
        cfg.beta = beta;
        const PhaseResult enc_free = free_phase(net.encoder, x, cfg);
        const Vector latent = enc_free.outputs(net.encoder);
        const PhaseResult dec_free = free_phase(net.decoder, latent, cfg);
        const PhaseResult plus = clamped_phase(net.decoder, latent, x, beta, cfg, dec_free.state);
        const PhaseResult minus = clamped_phase(net.decoder, latent, x, -beta, cfg, dec_free.state);
        return update_block(net.decoder,
                            ep_weight_update(net.decoder, plus.state, minus.state, cfg));
    };
    auto analytic_for = [&]() {
        const PhaseResult enc_free = free_phase(net.encoder, x, cfg);
        const Vector latent = enc_free.outputs(net.encoder);
        return analytic_decoder_gradient(net.decoder, latent, x, cfg);
    };

    const Matrix analytic = -analytic_for(); // EP update descends, gradient ascends
    const Matrix ep_full = ep_update_for_beta(1e-3);
    const Matrix ep_half = ep_update_for_beta(5e-4);

    const double cosine = (ep_full.cwiseProduct(analytic)).sum() /
                          (ep_full.norm() * analytic.norm());
    CHECK(cosine >= 0.99);

    const double err_full = (ep_full - analytic).norm() / analytic.norm();
    const double err_half = (ep_half - analytic).norm() / analytic.norm();
    CHECK(err_full <= 0.05);
    CHECK(err_half <= err_full * 1.05 + 1e-12);
}

TEST_CASE("encoder_output_gradient") {
    std::mt19937_64 rng(72);
    const int n = 6, r = 2;
    EpNetwork net = make_autoencoder(n, r, 73);
    const EpConfig base = fast_config();

    SUBCASE("zero loss gives zero force") {
        const Vector latent = oracles::random_matrix(r, 1, rng);
        EpConfig cfg = base;
        const PhaseResult dec_free = free_phase(net.decoder, latent, cfg);
        const Vector target = dec_free.state.tail(n); // realized output as target
        const PhaseResult plus = clamped_phase(net.decoder, latent, target, cfg.beta, cfg, dec_free.state);
        const PhaseResult minus =
            clamped_phase(net.decoder, latent, target, -cfg.beta, cfg, dec_free.state);
        const Vector force = encoder_output_gradient(net.decoder, plus.state, minus.state, cfg);
        CHECK(force.cwiseAbs().maxCoeff() <= 1e-8);
    }

    SUBCASE("matches a finite-difference loss gradient within 5%") {
        const Vector latent = oracles::random_matrix(r, 1, rng);
        const Vector target = oracles::random_matrix(n, 1, rng);
        EpConfig cfg = base;
        cfg.beta = 1e-3;
        const PhaseResult dec_free = free_phase(net.decoder, latent, cfg);
        const PhaseResult plus = clamped_phase(net.decoder, latent, target, cfg.beta, cfg, dec_free.state);
        const PhaseResult minus =
            clamped_phase(net.decoder, latent, target, -cfg.beta, cfg, dec_free.state);
        const Vector force = encoder_output_gradient(net.decoder, plus.state, minus.state, cfg);

        auto loss_at = [&](const Vector& s) {
            const PhaseResult fp = free_phase(net.decoder, s, cfg);
            return 0.5 * (target - fp.state.tail(n)).squaredNorm();
        };
        Vector fd(r);
        const double h = 1e-4;
        for (int k = 0; k < r; ++k) {
            Vector up = latent, down = latent;
            up[k] += h;
            down[k] -= h;
            fd[k] = (loss_at(up) - loss_at(down)) / (2.0 * h);
        }
        CHECK((force - fd).norm() <= 0.05 * fd.norm() + 1e-10);

        SUBCASE("descent direction: stepping latents against the force lowers the loss") {
            const double before = loss_at(latent);
            const double after = loss_at(latent - 0.05 * force);
            CHECK(after < before);
        }
    }
}

TEST_CASE("train_epoch with eta = 0 leaves the network untouched") {
    std::mt19937_64 rng(74);
    EpNetwork net = make_autoencoder(5, 2, 75);
    const Matrix before_enc = net.encoder.coupling;
    const Matrix before_dec = net.decoder.coupling;
    const Matrix data = oracles::random_matrix(5, 8, rng);
    EpConfig cfg = fast_config();
    cfg.eta = 0.0;
    std::mt19937_64 shuffle_rng(1);
    const EpochStats first = train_epoch(net, data, cfg, shuffle_rng);
    const EpochStats second = train_epoch(net, data, cfg, shuffle_rng);
    CHECK(std::memcmp(net.encoder.coupling.data(), before_enc.data(),
                      sizeof(double) * before_enc.size()) == 0);
    CHECK(std::memcmp(net.decoder.coupling.data(), before_dec.data(),
                      sizeof(double) * before_dec.size()) == 0);
    CHECK(first.loss == second.loss);
    CHECK(first.update_norm == 0.0);
}

TEST_CASE("training preserves coupling symmetry and the zero diagonal") {
    std::mt19937_64 rng(76);
    EpNetwork net = make_autoencoder(6, 2, 77);
    const Matrix data = oracles::random_matrix(6, 10, rng);
    EpConfig cfg = fast_config();
    cfg.eta = 0.05;
    std::mt19937_64 shuffle_rng(2);
    for (int epoch = 0; epoch < 3; ++epoch) train_epoch(net, data, cfg, shuffle_rng);
    for (const EpSubnet* sub : {&net.encoder, &net.decoder}) {
        CHECK((sub->coupling - sub->coupling.transpose()).cwiseAbs().maxCoeff() == 0.0);
        CHECK(sub->coupling.diagonal().cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("exactly representable data trains to a vanishing loss") {
    // rank(X) = 2 with a rank-3 latent layer: the floor is zero.
    std::mt19937_64 rng(78);
    const Matrix basis = oracles::random_matrix(6, 2, rng);
    const Matrix data = basis * oracles::random_matrix(2, 12, rng);
    EpNetwork net = make_autoencoder(6, 3, 79);
    EpConfig cfg = fast_config();
    cfg.eta = 0.02;
    cfg.epochs = 400;
    EpTrainer trainer(std::move(net), cfg);
    const TrainTrace& trace = trainer.run(data, cfg.epochs);
    CHECK(trace.loss.back() <= 1e-4 * data.squaredNorm());
    CHECK(trace.loss.back() < trace.loss.front());
}

TEST_CASE("loss-stationary network produces near-zero EP updates") {
    std::mt19937_64 rng(80);
    const int n = 6, r = 3;
    const Matrix a = orthonormal_columns(n, r, rng);
    const Matrix data = a * oracles::random_matrix(r, 9, rng); // exactly representable
    EpNetwork net = make_autoencoder(n, r, 81);
    // Hand-build the stationary point: encoder block A^T, decoder block A.
    net.encoder.coupling.setZero();
    net.decoder.coupling.setZero();
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < r; ++k) {
            net.encoder.coupling(i, net.encoder.output_start() + k) = a(i, k);
            net.encoder.coupling(net.encoder.output_start() + k, i) = a(i, k);
            net.decoder.coupling(k, net.decoder.output_start() + i) = a(i, k);
            net.decoder.coupling(net.decoder.output_start() + i, k) = a(i, k);
        }
    }
    EpConfig cfg = fast_config();
    cfg.eta = 0.01;
    std::mt19937_64 shuffle_rng(3);
    const EpochStats stats = train_epoch(net, data, cfg, shuffle_rng);
    CHECK(stats.update_norm <= 1e-6 * cfg.eta);
}

TEST_CASE("EP approaches the PCA floor on a small dense instance") {
    std::mt19937_64 rng(82);
    const int n = 10, r = 2;
    const Matrix data = oracles::random_matrix(n, 15, rng);
    EpConfig cfg = fast_config();
    cfg.eta = 0.02;
    cfg.epochs = 250;
    cfg.seed = 83;
    EpTrainer trainer(make_autoencoder(n, r, cfg.seed), cfg);
    const TrainTrace& trace = trainer.run(data, cfg.epochs);
    const double floor = oracles::pca_floor(data, r);
    CHECK(trace.loss.back() <= 1.10 * floor);
    CHECK(trace.loss.back() >= floor * (1.0 - 1e-6)); // cannot beat the optimum
}

TEST_CASE("decoder_matrix: idempotent couplings converge to the projection itself") {
    std::mt19937_64 rng(84);
    const Matrix a = oracles::random_matrix(7, 3, rng);
    const Matrix projection = a * (a.transpose() * a).inverse() * a.transpose();
    EpSubnet net;
    net.input_count = 0;
    net.has_bias = false;
    net.output_count = 7;
    net.coupling = 0.5 * (projection + projection.transpose());
    const DecoderMap map = decoder_matrix(net, 100.0);
    CHECK(map.converged);
    CHECK((map.map - projection).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("decoder_matrix: zero couplings decay to the zero map") {
    EpSubnet net;
    net.input_count = 0;
    net.has_bias = false;
    net.output_count = 4;
    net.coupling = Matrix::Zero(4, 4);
    const DecoderMap map = decoder_matrix(net, 100.0);
    CHECK(map.converged);
    CHECK(map.map.cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("decoder_matrix: orthonormal-column probe reproduces the loading block") {
    std::mt19937_64 rng(85);
    const int n = 8, r = 3;
    const Matrix a = orthonormal_columns(n, r, rng);
    EpSubnet decoder = subnet_from_weights(a.transpose(), true); // W(i_in=k, j_out=i) = A(i, k)
    const DecoderMap map = decoder_matrix(decoder, 100.0);
    CHECK(map.converged);
    CHECK((map.loadings - a).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("decoder_matrix flags non-convergence with the offending spectrum") {
    EpSubnet net;
    net.input_count = 0;
    net.has_bias = false;
    net.output_count = 2;
    net.coupling = 2.0 * Matrix::Identity(2, 2); // J - I has eigenvalue +1
    const DecoderMap map = decoder_matrix(net, 50.0);
    CHECK_FALSE(map.converged);
    CHECK_FALSE(map.unstable_eigenvalues.empty());
}

TEST_CASE("pseudo_inverse_encoder") {
    Matrix single(2, 1);
    single << 1.0, 0.0;
    const Matrix b = pseudo_inverse_encoder(single);
    CHECK(b(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(b(0, 1) == doctest::Approx(0.0).epsilon(1e-14));

    std::mt19937_64 rng(86);
    const Matrix q = orthonormal_columns(5, 3, rng);
    CHECK((pseudo_inverse_encoder(q) - q.transpose()).cwiseAbs().maxCoeff() <= 1e-12);

    const Matrix a = oracles::random_matrix(6, 3, rng);
    const Matrix pinv = pseudo_inverse_encoder(a);
    CHECK((pinv * a - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((a * pinv * a - a).cwiseAbs().maxCoeff() <= 1e-9);

    Matrix deficient(4, 2);
    deficient.col(0) = oracles::random_matrix(4, 1, rng);
    deficient.col(1) = 2.0 * deficient.col(0);
    CHECK_THROWS_AS(pseudo_inverse_encoder(deficient), std::invalid_argument);
}

TEST_CASE("latent_covariance") {
    Matrix single(2, 1);
    single << 1.0, 0.0;
    const Matrix p = latent_covariance(single);
    CHECK(p(0, 0) == 1.0);
    CHECK(p(0, 1) == 0.0);
    CHECK(p(1, 1) == 0.0);

    CHECK(latent_covariance(Matrix::Zero(3, 5)).cwiseAbs().maxCoeff() == 0.0);

    std::mt19937_64 rng(87);
    const Matrix latents = oracles::random_matrix(3, 40, rng);
    const Matrix direct = latents * latents.transpose() / 40.0;
    CHECK((latent_covariance(latents) - direct).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("lowrank_from_autoencoder") {
    const int n = 6, r = 2;
    Matrix embed = Matrix::Zero(n, r);
    embed(0, 0) = 1.0;
    embed(1, 1) = 1.0;
    const Matrix m = lowrank_from_autoencoder(embed, Matrix::Identity(r, r));
    Matrix expected = Matrix::Zero(n, n);
    expected(0, 0) = 1.0;
    expected(1, 1) = 1.0;
    CHECK((m - expected).cwiseAbs().maxCoeff() == 0.0);

    std::mt19937_64 rng(88);
    const Matrix a = oracles::random_matrix(8, 3, rng);
    const Matrix p = oracles::random_psd(3, rng);
    const Matrix low = lowrank_from_autoencoder(a, p);
    Eigen::JacobiSVD<Matrix> svd(low);
    for (Eigen::Index k = 3; k < svd.singularValues().size(); ++k) {
        CHECK(svd.singularValues()[k] <= 1e-8 * svd.singularValues()[0]);
    }

    Matrix indefinite(2, 2);
    indefinite << 1.0, 0.0, 0.0, -1.0;
    CHECK_THROWS_AS(lowrank_from_autoencoder(oracles::random_matrix(4, 2, rng), indefinite),
                    std::invalid_argument);
}

TEST_CASE("projection lemma: J = A (A^T A)^{-1} A^T is an idempotent {0,1}-spectrum map") {
    std::mt19937_64 rng(89);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 4 + static_cast<int>(rng() % 27);  // up to 30
        const int r = 1 + static_cast<int>(rng() % std::min(8, n - 1));
        const Matrix a = oracles::random_matrix(n, r, rng);
        const Matrix j = a * (a.transpose() * a).inverse() * a.transpose();

        CHECK((j * j - j).norm() <= 1e-8);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (j + j.transpose()));
        int unit_count = 0;
        for (Eigen::Index k = 0; k < n; ++k) {
            const double lambda = eig.eigenvalues()[k];
            const double dist = std::min(std::abs(lambda), std::abs(lambda - 1.0));
            CHECK(dist <= 1e-6);
            if (std::abs(lambda - 1.0) <= 1e-6) ++unit_count;
            const double shifted = lambda - 1.0;
            CHECK(std::min(std::abs(shifted), std::abs(shifted + 1.0)) <= 1e-6);
        }
        CHECK(unit_count >= 1);
        CHECK(unit_count <= r);
    }
}

TEST_CASE("checkpoint round trip resumes training exactly") {
    std::mt19937_64 rng(90);
    const Matrix data = oracles::random_matrix(5, 7, rng);
    EpConfig cfg = fast_config();
    cfg.eta = 0.03;
    cfg.seed = 91;

    EpTrainer full(make_autoencoder(5, 2, cfg.seed), cfg);
    full.run(data, 3);

    EpTrainer partial(make_autoencoder(5, 2, cfg.seed), cfg);
    partial.run(data, 2);
    EpTrainer resumed = EpTrainer::from_checkpoint_json(partial.checkpoint_json());
    CHECK(resumed.epoch() == 2);
    resumed.run_epoch(data);

    CHECK(std::memcmp(resumed.network().encoder.coupling.data(),
                      full.network().encoder.coupling.data(),
                      sizeof(double) * full.network().encoder.coupling.size()) == 0);
    CHECK(std::memcmp(resumed.network().decoder.coupling.data(),
                      full.network().decoder.coupling.data(),
                      sizeof(double) * full.network().decoder.coupling.size()) == 0);
}

TEST_CASE("extract_factor_model produces consistent shapes and a PSD latent covariance") {
    std::mt19937_64 rng(92);
    const Matrix data = oracles::random_matrix(6, 9, rng);
    EpConfig cfg = fast_config();
    cfg.eta = 0.02;
    EpTrainer trainer(make_autoencoder(6, 2, 93), cfg);
    trainer.run(data, 30);
    const FactorModel model = extract_factor_model(trainer.network(), data, cfg);
    CHECK(model.loadings.rows() == 6);
    CHECK(model.loadings.cols() == 2);
    REQUIRE(model.encoder.has_value());
    CHECK(model.encoder->rows() == 2);
    CHECK(model.encoder->cols() == 6);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(model.latent_cov, Eigen::EigenvaluesOnly);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("backprop_reference_train") {
    std::mt19937_64 rng(94);
    const Matrix data = oracles::random_matrix(8, 12, rng);

    SUBCASE("analytic gradients match central finite differences") {
        const int r = 3;
        Matrix a = oracles::random_matrix(8, r, rng) * 0.3;
        Matrix b = oracles::random_matrix(r, 8, rng) * 0.3;
        const Matrix residual = data - a * b * data;
        const Matrix grad_a = -2.0 * residual * (b * data).transpose();
        const Matrix grad_b = -2.0 * a.transpose() * residual * data.transpose();

        auto loss_with = [&](const Matrix& aa, const Matrix& bb) {
            return (data - aa * bb * data).squaredNorm();
        };
        const double h = 1e-6;
        for (int probe = 0; probe < 5; ++probe) {
            const int i = static_cast<int>(rng() % 8);
            const int k = static_cast<int>(rng() % r);
            Matrix up = a, down = a;
            up(i, k) += h;
            down(i, k) -= h;
            const double fd = (loss_with(up, b) - loss_with(down, b)) / (2.0 * h);
            CHECK(grad_a(i, k) == doctest::Approx(fd).epsilon(1e-5));

            Matrix bup = b, bdown = b;
            bup(k, i) += h;
            bdown(k, i) -= h;
            const double fd_b = (loss_with(a, bup) - loss_with(a, bdown)) / (2.0 * h);
            CHECK(grad_b(k, i) == doctest::Approx(fd_b).epsilon(1e-5));
        }
    }

    SUBCASE("eta = 0 freezes the weights") {
        const BpResult frozen = backprop_reference_train(data, 3, 5, 0.0, 17);
        const BpResult fresh = backprop_reference_train(data, 3, 1, 0.0, 17);
        CHECK(std::memcmp(frozen.loadings.data(), fresh.loadings.data(),
                          sizeof(double) * frozen.loadings.size()) == 0);
        CHECK(frozen.trace.loss.front() == frozen.trace.loss.back());
    }

    SUBCASE("reaches the PCA floor within 5% on a small instance") {
        const BpResult trained = backprop_reference_train(data, 3, 8000, 2e-4, 18);
        const double floor = oracles::pca_floor(data, 3);
        CHECK(trained.trace.loss.back() <= 1.05 * floor);
    }

    SUBCASE("diverging step size raises a step-size error") {
        CHECK_THROWS_WITH_AS(backprop_reference_train(data, 3, 2000, 0.5, 19),
                             doctest::Contains("step size"), std::runtime_error);
    }
}
