#include "portopt/ep_autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>
#include <nlohmann/json.hpp>

#include "portopt/io_util.hpp"
#include "portopt/kernels.hpp"

namespace portopt {

double clipped_linear(double x, double clip) {
    if (x > clip) return clip;
    if (x < -clip) return -clip;
    return x;
}

namespace {
inline double clip_derivative(double x, double clip) {
    return std::abs(x) <= clip ? 1.0 : 0.0;
}

Vector clip_all(const Vector& x, double clip) {
    return x.cwiseMax(-clip).cwiseMin(clip);
}
} // namespace

bool EpSubnet::is_edge(int i, int j) const {
    if (i == j) return false;
    const bool i_clamped = i < clamped_count();
    const bool j_clamped = j < clamped_count();
    return i_clamped != j_clamped;
}

EpSubnet make_bipartite_subnet(int inputs, int outputs, bool bias, std::mt19937_64& rng) {
    EpSubnet net;
    net.input_count = inputs;
    net.has_bias = bias;
    net.output_count = outputs;
    const int total = net.total_units();
    const double scale = 1.0 / std::sqrt(static_cast<double>(inputs + outputs));
    std::uniform_real_distribution<double> uniform(-scale, scale);
    net.coupling = Matrix::Zero(total, total);
    for (int i = 0; i < net.clamped_count(); ++i) {
        for (int j = net.output_start(); j < total; ++j) {
            const double w = uniform(rng);
            net.coupling(i, j) = w;
            net.coupling(j, i) = w;
        }
    }
    return net;
}

EpNetwork make_autoencoder(int data_dim, int latent_dim, std::uint64_t seed) {
    if (data_dim < 1 || latent_dim < 1) {
        throw std::invalid_argument("make_autoencoder: dimensions must be positive");
    }
    std::mt19937_64 rng(seed);
    EpNetwork net;
    net.encoder = make_bipartite_subnet(data_dim, latent_dim, true, rng);
    net.decoder = make_bipartite_subnet(latent_dim, data_dim, true, rng);
    net.data_dim = data_dim;
    net.latent_dim = latent_dim;
    return net;
}

namespace {
Vector clamped_potentials(const EpSubnet& net, const Vector& input) {
    if (input.size() != net.input_count) {
        throw std::invalid_argument("phase input length " + std::to_string(input.size()) +
                                    " does not match the network input set (" +
                                    std::to_string(net.input_count) + ")");
    }
    Vector clamped(net.clamped_count());
    clamped.head(net.input_count) = input;
    if (net.has_bias) clamped[net.input_count] = 1.0;
    return clamped;
}

PhaseResult relax(const EpSubnet& net, const Vector& input, const EpConfig& cfg, Vector free_x,
                  double beta_signed, const Vector* target, const Vector* cost_gradient,
                  const char* phase_name) {
    if (!(cfg.clip > 0.0)) throw std::invalid_argument("ep config: clip must be positive");
    if (!(cfg.relax_dt > 0.0)) throw std::invalid_argument("ep config: relax_dt must be positive");
    const int nf = net.output_count;
    const int nc = net.clamped_count();
    const Vector clamped = clamped_potentials(net, input);
    if (free_x.size() == 0) free_x = Vector::Zero(nf);
    if (free_x.size() != nf) throw std::invalid_argument("phase init has wrong dimension");
    if (target && target->size() != nf) throw std::invalid_argument("phase target has wrong dimension");
    if (cost_gradient && cost_gradient->size() != nf) {
        throw std::invalid_argument("phase cost gradient has wrong dimension");
    }

    const Matrix drive_block = net.coupling.block(net.output_start(), 0, nf, nc);
    const Matrix lateral = net.coupling.block(net.output_start(), net.output_start(), nf, nf);
    const bool lateral_zero = lateral.isZero(0.0);
    const Vector clamped_v = clip_all(clamped, cfg.clip);
    Vector drive(nf);
    kernels::coupling_drive(drive_block, clamped_v, Vector::Zero(nf), drive);

    PhaseResult result;
    Vector rate(nf), with_lateral(nf);
    const double diverge_level = 10.0 * cfg.clip;
    int diverge_run = 0;
    for (int step = 0; step < cfg.relax_steps; ++step) {
        if (lateral_zero) {
            rate = drive - free_x;
        } else {
            kernels::coupling_drive(lateral, clip_all(free_x, cfg.clip), drive, with_lateral);
            rate = with_lateral - free_x;
        }
        if (target) rate += beta_signed * (*target - free_x);
        if (cost_gradient) rate -= beta_signed * (*cost_gradient);

        const double dx_max = nf > 0 ? cfg.relax_dt * rate.cwiseAbs().maxCoeff() : 0.0;
        free_x += cfg.relax_dt * rate;
        ++result.steps;
        if (!free_x.allFinite()) {
            throw std::runtime_error(std::string("relaxation diverged (non-finite state) in ") +
                                     phase_name + " phase at step " + std::to_string(result.steps));
        }
        if (nf > 0 && free_x.cwiseAbs().maxCoeff() > diverge_level) {
            if (++diverge_run >= 100) {
                throw std::runtime_error(std::string("relaxation unstable in ") + phase_name +
                                         " phase: |x|_inf above " + g17(diverge_level) + " for " +
                                         std::to_string(diverge_run) + " consecutive steps");
            }
        } else {
            diverge_run = 0;
        }
        if (dx_max < 1e-10) {
            result.converged = true;
            break;
        }
    }

    result.state.resize(net.total_units());
    result.state.head(nc) = clamped;
    result.state.tail(nf) = free_x;
    return result;
}
} // namespace

PhaseResult free_phase(const EpSubnet& net, const Vector& input, const EpConfig& cfg,
                       const Vector* init_free) {
    return relax(net, input, cfg, init_free ? *init_free : Vector{}, 0.0, nullptr, nullptr, "free");
}

PhaseResult clamped_phase(const EpSubnet& net, const Vector& input, const Vector& target,
                          double beta_signed, const EpConfig& cfg, const Vector& start_state) {
    if (std::abs(std::abs(beta_signed) - cfg.beta) > 0.0) {
        throw std::invalid_argument("clamped_phase: |beta_signed| must equal cfg.beta");
    }
    if (start_state.size() != net.total_units()) {
        throw std::invalid_argument("clamped_phase: start state has wrong dimension");
    }
    Vector init = start_state.tail(net.output_count);
    return relax(net, input, cfg, std::move(init), beta_signed, &target, nullptr, "clamped");
}

PhaseResult forced_clamped_phase(const EpSubnet& net, const Vector& input,
                                 const Vector& cost_gradient, double beta_signed,
                                 const EpConfig& cfg, const Vector& start_state) {
    if (std::abs(std::abs(beta_signed) - cfg.beta) > 0.0) {
        throw std::invalid_argument("forced_clamped_phase: |beta_signed| must equal cfg.beta");
    }
    if (start_state.size() != net.total_units()) {
        throw std::invalid_argument("forced_clamped_phase: start state has wrong dimension");
    }
    Vector init = start_state.tail(net.output_count);
    return relax(net, input, cfg, std::move(init), beta_signed, nullptr, &cost_gradient,
                 "forced-clamped");
}

Matrix ep_weight_update(const EpSubnet& net, const Vector& state_plus, const Vector& state_minus,
                        const EpConfig& cfg) {
    const int total = net.total_units();
    if (state_plus.size() != total || state_minus.size() != total) {
        throw std::invalid_argument("ep_weight_update: state dimension mismatch");
    }
    const Vector v_plus = clip_all(state_plus, cfg.clip);
    const Vector v_minus = clip_all(state_minus, cfg.clip);
    const double scale = cfg.eta / (2.0 * cfg.beta);
    Matrix delta = Matrix::Zero(total, total);
    for (int i = 0; i < net.clamped_count(); ++i) {
        for (int j = net.output_start(); j < total; ++j) {
            const double d = scale * (v_plus[i] * v_plus[j] - v_minus[i] * v_minus[j]);
            delta(i, j) = d;
            delta(j, i) = d;
        }
    }
    return delta;
}

Vector encoder_output_gradient(const EpSubnet& decoder, const Vector& state_plus,
                               const Vector& state_minus, const EpConfig& cfg) {
    const int total = decoder.total_units();
    if (state_plus.size() != total || state_minus.size() != total) {
        throw std::invalid_argument("encoder_output_gradient: state dimension mismatch");
    }
    // dF/dx_i = g'(x_i) (x_i - (J v)_i): the energy gradient at a clamped
    // input unit, whose value it keeps between the two phases.
    auto energy_gradient = [&](const Vector& state, Vector& out) {
        Vector jv(total);
        kernels::coupling_drive(decoder.coupling, clip_all(state, cfg.clip), Vector::Zero(total), jv);
        out.resize(decoder.input_count);
        for (int i = 0; i < decoder.input_count; ++i) {
            out[i] = clip_derivative(state[i], cfg.clip) * (state[i] - jv[i]);
        }
    };
    Vector grad_plus, grad_minus;
    energy_gradient(state_plus, grad_plus);
    energy_gradient(state_minus, grad_minus);
    return (grad_plus - grad_minus) / (2.0 * cfg.beta);
}

Vector encode_sample(const EpNetwork& net, const Vector& x, const EpConfig& cfg) {
    return free_phase(net.encoder, x, cfg).outputs(net.encoder);
}

Vector decode_latent(const EpNetwork& net, const Vector& latent, const EpConfig& cfg) {
    return free_phase(net.decoder, latent, cfg).outputs(net.decoder);
}

Matrix encode_all(const EpNetwork& net, const Matrix& data, const EpConfig& cfg) {
    Matrix latents(net.latent_dim, data.cols());
    for (Eigen::Index t = 0; t < data.cols(); ++t) {
        latents.col(t) = encode_sample(net, data.col(t), cfg);
    }
    return latents;
}

double reconstruction_loss(const EpNetwork& net, const Matrix& data, const EpConfig& cfg) {
    double loss = 0.0;
    for (Eigen::Index t = 0; t < data.cols(); ++t) {
        Vector latent = encode_sample(net, data.col(t), cfg);
        Vector reconstructed = decode_latent(net, latent, cfg);
        loss += (data.col(t) - reconstructed).squaredNorm();
    }
    return loss;
}

EpochStats train_epoch(EpNetwork& net, const Matrix& data, const EpConfig& cfg,
                       std::mt19937_64& shuffle_rng) {
    if (data.rows() != net.data_dim) throw std::invalid_argument("train_epoch: data dimension mismatch");
    if (data.cols() < 1) throw std::invalid_argument("train_epoch: need at least one sample");

    std::vector<int> order(static_cast<std::size_t>(data.cols()));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochStats stats;
    double update_accum = 0.0;
    for (int idx : order) {
        const Vector x = data.col(idx);
        const PhaseResult enc_free = free_phase(net.encoder, x, cfg);
        const Vector latent = enc_free.outputs(net.encoder);

        const PhaseResult dec_free = free_phase(net.decoder, latent, cfg);
        const PhaseResult dec_plus =
            clamped_phase(net.decoder, latent, x, cfg.beta, cfg, dec_free.state);
        const PhaseResult dec_minus =
            clamped_phase(net.decoder, latent, x, -cfg.beta, cfg, dec_free.state);
        const Matrix delta_dec = ep_weight_update(net.decoder, dec_plus.state, dec_minus.state, cfg);
        const Vector force = encoder_output_gradient(net.decoder, dec_plus.state, dec_minus.state, cfg);

        const PhaseResult enc_plus =
            forced_clamped_phase(net.encoder, x, force, cfg.beta, cfg, enc_free.state);
        const PhaseResult enc_minus =
            forced_clamped_phase(net.encoder, x, force, -cfg.beta, cfg, enc_free.state);
        const Matrix delta_enc = ep_weight_update(net.encoder, enc_plus.state, enc_minus.state, cfg);

        net.decoder.coupling += delta_dec;
        net.encoder.coupling += delta_enc;
        update_accum += std::sqrt(delta_dec.squaredNorm() + delta_enc.squaredNorm());
        for (const auto* phase : {&enc_free, &dec_free, &dec_plus, &dec_minus, &enc_plus, &enc_minus}) {
            stats.max_abs_state = std::max(stats.max_abs_state, phase->state.cwiseAbs().maxCoeff());
        }
    }
    stats.update_norm = update_accum / static_cast<double>(data.cols());
    stats.loss = reconstruction_loss(net, data, cfg);
    return stats;
}

EpTrainer::EpTrainer(EpNetwork net, EpConfig cfg)
    : net_(std::move(net)), cfg_(cfg), rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull) {}

EpochStats EpTrainer::run_epoch(const Matrix& data) {
    EpochStats stats = train_epoch(net_, data, cfg_, rng_);
    ++epoch_;
    trace_.loss.push_back(stats.loss);
    trace_.update_norm.push_back(stats.update_norm);
    trace_.max_abs_state.push_back(stats.max_abs_state);
    return stats;
}

const TrainTrace& EpTrainer::run(const Matrix& data, int epochs) {
    for (int i = 0; i < epochs; ++i) run_epoch(data);
    return trace_;
}

namespace {
nlohmann::json matrix_rows(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix rows_to_matrix(const nlohmann::json& rows) {
    const auto r = static_cast<Eigen::Index>(rows.size());
    const auto c = r > 0 ? static_cast<Eigen::Index>(rows.front().size()) : 0;
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
    return m;
}
} // namespace

std::string EpTrainer::checkpoint_json() const {
    nlohmann::json doc;
    doc["format"] = "ep-checkpoint-v1";
    doc["epoch"] = epoch_;
    std::ostringstream rng_stream;
    rng_stream << rng_;
    doc["rng_state"] = rng_stream.str();
    doc["config"] = {{"beta", cfg_.beta},           {"eta", cfg_.eta},
                     {"clip", cfg_.clip},           {"relax_dt", cfg_.relax_dt},
                     {"relax_steps", cfg_.relax_steps}, {"epochs", cfg_.epochs},
                     {"seed", cfg_.seed}};
    doc["data_dim"] = net_.data_dim;
    doc["latent_dim"] = net_.latent_dim;
    doc["encoder"] = matrix_rows(net_.encoder.coupling);
    doc["decoder"] = matrix_rows(net_.decoder.coupling);
    return doc.dump(2) + "\n";
}

EpTrainer EpTrainer::from_checkpoint_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint JSON: ") + e.what());
    }
    if (doc.value("format", "") != "ep-checkpoint-v1") {
        throw ParseError("checkpoint JSON: unknown format tag");
    }
    EpConfig cfg;
    const auto& jc = doc.at("config");
    cfg.beta = jc.at("beta").get<double>();
    cfg.eta = jc.at("eta").get<double>();
    cfg.clip = jc.at("clip").get<double>();
    cfg.relax_dt = jc.at("relax_dt").get<double>();
    cfg.relax_steps = jc.at("relax_steps").get<int>();
    cfg.epochs = jc.at("epochs").get<int>();
    cfg.seed = jc.at("seed").get<std::uint64_t>();

    EpNetwork net = make_autoencoder(doc.at("data_dim").get<int>(), doc.at("latent_dim").get<int>(), 0);
    net.encoder.coupling = rows_to_matrix(doc.at("encoder"));
    net.decoder.coupling = rows_to_matrix(doc.at("decoder"));

    EpTrainer trainer(std::move(net), cfg);
    trainer.epoch_ = doc.at("epoch").get<int>();
    std::istringstream rng_stream(doc.at("rng_state").get<std::string>());
    rng_stream >> trainer.rng_;
    if (!rng_stream) throw ParseError("checkpoint JSON: bad RNG state");
    return trainer;
}

DecoderMap decoder_matrix(const EpSubnet& net, double max_horizon) {
    const int total = net.total_units();
    const int nc = net.clamped_count();
    Matrix generator = net.coupling - Matrix::Identity(total, total);
    generator.topRows(nc).setZero(); // clamped units do not move

    DecoderMap result;
    const Matrix step = generator.exp();
    Matrix current = step;
    double t = 1.0;
    while (t < max_horizon) {
        Matrix next = step * current;
        const double diff = (next - current).cwiseAbs().maxCoeff();
        current = std::move(next);
        t += 1.0;
        if (diff < 1e-9) {
            result.converged = true;
            break;
        }
    }
    result.horizon_used = t;
    result.map = std::move(current);
    result.loadings = result.map.block(net.output_start(), 0, net.output_count, net.input_count);
    if (!result.converged) {
        const Matrix free_gen =
            generator.block(net.output_start(), net.output_start(), net.output_count,
                            net.output_count);
        Eigen::EigenSolver<Matrix> eig(free_gen);
        for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
            if (eig.eigenvalues()[i].real() >= -1e-12) {
                result.unstable_eigenvalues.push_back(eig.eigenvalues()[i]);
            }
        }
    }
    return result;
}

Matrix pseudo_inverse_encoder(const Matrix& loadings) {
    Eigen::ColPivHouseholderQR<Matrix> qr(loadings);
    if (qr.rank() < loadings.cols()) {
        throw std::invalid_argument("pseudo_inverse_encoder: loading matrix is rank deficient");
    }
    return qr.solve(Matrix::Identity(loadings.rows(), loadings.rows()));
}

Matrix latent_covariance(const Matrix& latents) {
    if (latents.cols() < 1) throw std::invalid_argument("latent_covariance: need at least one column");
    return kernels::scaled_gram(latents);
}

Matrix lowrank_from_autoencoder(const Matrix& loadings, const Matrix& latent_cov) {
    if (latent_cov.rows() != loadings.cols() || latent_cov.cols() != loadings.cols()) {
        throw std::invalid_argument("lowrank_from_autoencoder: shape mismatch");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(latent_cov, Eigen::EigenvaluesOnly);
    const double max_eig = std::max(eig.eigenvalues().maxCoeff(), 0.0);
    if (eig.eigenvalues().minCoeff() < -1e-8 * std::max(max_eig, 1.0)) {
        throw std::invalid_argument("lowrank_from_autoencoder: latent covariance is not PSD");
    }
    Matrix m = loadings * latent_cov * loadings.transpose();
    return 0.5 * (m + m.transpose());
}

FactorModel extract_factor_model(const EpNetwork& net, const Matrix& data, const EpConfig& cfg) {
    const DecoderMap decoder = decoder_matrix(net.decoder);
    if (!decoder.converged) {
        std::string eigs;
        for (const auto& z : decoder.unstable_eigenvalues) {
            eigs += " (" + g17(z.real()) + (z.imag() >= 0 ? "+" : "") + g17(z.imag()) + "i)";
        }
        throw std::runtime_error("decoder propagator did not converge; eigenvalues with "
                                 "nonnegative real part:" + eigs);
    }
    const DecoderMap encoder = decoder_matrix(net.encoder);

    FactorModel model;
    model.loadings = decoder.loadings;
    model.encoder = encoder.loadings;
    model.latent_cov = latent_covariance(encode_all(net, data, cfg));
    model.rank = net.latent_dim;
    model.psi = Vector::Zero(net.data_dim);
    return model;
}

BpResult backprop_reference_train(const Matrix& data, int latent_dim, int epochs, double eta,
                                  std::uint64_t seed) {
    const Eigen::Index n = data.rows();
    if (latent_dim < 1 || latent_dim > n) {
        throw std::invalid_argument("backprop_reference_train: bad latent dimension");
    }
    std::mt19937_64 rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n + latent_dim));
    std::uniform_real_distribution<double> uniform(-scale, scale);
    BpResult result;
    result.loadings.resize(n, latent_dim);
    result.encoder.resize(latent_dim, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < latent_dim; ++k) result.loadings(i, k) = uniform(rng);
    for (Eigen::Index k = 0; k < latent_dim; ++k)
        for (Eigen::Index i = 0; i < n; ++i) result.encoder(k, i) = uniform(rng);

    double initial_loss = -1.0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const Matrix encoded = result.encoder * data;
        const Matrix residual = data - result.loadings * encoded;
        const double loss = residual.squaredNorm();
        if (epoch == 0) initial_loss = loss;
        if (loss > 10.0 * initial_loss) {
            throw std::runtime_error("backprop_reference_train: loss rose tenfold at epoch " +
                                     std::to_string(epoch) + "; reduce the step size");
        }
        const Matrix grad_loadings = -2.0 * residual * encoded.transpose();
        const Matrix grad_encoder = -2.0 * result.loadings.transpose() * residual * data.transpose();
        result.loadings -= eta * grad_loadings;
        result.encoder -= eta * grad_encoder;

        const double post_loss = (data - result.loadings * (result.encoder * data)).squaredNorm();
        result.trace.loss.push_back(post_loss);
        result.trace.update_norm.push_back(
            eta * std::sqrt(grad_loadings.squaredNorm() + grad_encoder.squaredNorm()));
        result.trace.max_abs_state.push_back(0.0);
    }
    return result;
}

void write_loss_trace_csv(std::ostream& out, const TrainTrace& trace) {
    out << "epoch,loss_ep,update_norm\n";
    for (std::size_t i = 0; i < trace.loss.size(); ++i) {
        out << (i + 1) << ',' << g17(trace.loss[i]) << ',' << g17(trace.update_norm[i]) << '\n';
    }
}

} // namespace portopt
