#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "portopt/lowrank.hpp"
#include "portopt/matrix.hpp"

namespace portopt {

/// Equilibrium-propagation training knobs.
struct EpConfig {
    double beta = 1e-3;     // clamping factor, > 0
    double eta = 0.01;      // learning rate
    double clip = 10.0;     // activation clip bound c, > 0
    double relax_dt = 0.05; // relaxation step
    int relax_steps = 2000; // per-phase iteration cap
    int epochs = 200;
    std::uint64_t seed = 0;
};

/// g(x) = x for |x| <= c, else c * sgn(x).
double clipped_linear(double x, double clip);

/// One Hopfield network of an encoder/decoder pair. Unit layout is
/// [inputs..., bias (optional, clamped to 1), outputs...]; the coupling
/// matrix is symmetric with zero diagonal, and in the autoencoder topology
/// only input-to-output edges exist (no lateral edges).
struct EpSubnet {
    Matrix coupling;
    int input_count = 0;
    bool has_bias = true;
    int output_count = 0;

    int clamped_count() const { return input_count + (has_bias ? 1 : 0); }
    int total_units() const { return clamped_count() + output_count; }
    int output_start() const { return clamped_count(); }

    /// True for pairs joined by a structural (bipartite) edge.
    bool is_edge(int i, int j) const;
};

struct EpNetwork {
    EpSubnet encoder; // inputs n, outputs r (latent layer)
    EpSubnet decoder; // inputs r, outputs n
    int data_dim = 0;
    int latent_dim = 0;
};

/// Bipartite couplings sampled uniform in [-1/sqrt(in+out), 1/sqrt(in+out)].
EpSubnet make_bipartite_subnet(int inputs, int outputs, bool bias, std::mt19937_64& rng);
EpNetwork make_autoencoder(int data_dim, int latent_dim, std::uint64_t seed);

enum class NetSide { encoder, decoder };

struct PhaseResult {
    Vector state; // full unit vector, clamped values included
    int steps = 0;
    bool converged = false; // ||dx||_inf dropped below 1e-10

    Vector outputs(const EpSubnet& net) const {
        return state.tail(net.output_count);
    }
};

/// Relax dx_i/dt = -x_i + sum_j J_ij g(x_j) on the free (output) units with
/// the inputs clamped, by fixed-step iteration until ||dx||_inf < 1e-10 or
/// relax_steps. `init_free` defaults to zeros. Throws if |x|_inf stays above
/// 10 c for 100 consecutive steps.
PhaseResult free_phase(const EpSubnet& net, const Vector& input, const EpConfig& cfg,
                       const Vector* init_free = nullptr);

/// Weakly clamped phase: adds the output force beta_signed * (target - x_i),
/// starting from a previous fixed point. |beta_signed| must equal cfg.beta.
PhaseResult clamped_phase(const EpSubnet& net, const Vector& input, const Vector& target,
                          double beta_signed, const EpConfig& cfg, const Vector& start_state);

/// Clamped phase driven by a constant per-unit cost gradient instead of a
/// target: adds -beta_signed * cost_gradient to the output units. Used for
/// the encoder, whose loss lives at the far end of the decoder.
PhaseResult forced_clamped_phase(const EpSubnet& net, const Vector& input,
                                 const Vector& cost_gradient, double beta_signed,
                                 const EpConfig& cfg, const Vector& start_state);

/// Two-sided update Delta J_ij = (eta / (2 beta)) (v+_i v+_j - v-_i v-_j),
/// restricted to structural edges, symmetric, zero diagonal.
Matrix ep_weight_update(const EpSubnet& net, const Vector& state_plus, const Vector& state_minus,
                        const EpConfig& cfg);

/// Loss-gradient estimate for the clamped input units of `decoder`:
/// (1 / (2 beta)) (dF/dx_i |+ - dF/dx_i |-), i over the decoder input layer.
/// The result is the force the encoder's clamped phases apply to its outputs.
Vector encoder_output_gradient(const EpSubnet& decoder, const Vector& state_plus,
                               const Vector& state_minus, const EpConfig& cfg);

Vector encode_sample(const EpNetwork& net, const Vector& x, const EpConfig& cfg);
Vector decode_latent(const EpNetwork& net, const Vector& latent, const EpConfig& cfg);
Matrix encode_all(const EpNetwork& net, const Matrix& data, const EpConfig& cfg);

/// Sum of squared reconstruction errors over all columns of `data`.
double reconstruction_loss(const EpNetwork& net, const Matrix& data, const EpConfig& cfg);

struct EpochStats {
    double loss = 0.0;          // reconstruction loss after the epoch's updates
    double update_norm = 0.0;   // mean per-sample coupling-update Frobenius norm
    double max_abs_state = 0.0; // clip audit: largest |x_i| seen in any phase
};

/// One pass over the samples in a deterministic shuffled order drawn from
/// `shuffle_rng`: per sample, encoder free phase -> latent; decoder free
/// phase; decoder +-beta phases -> decoder update; encoder +-beta phases
/// driven by the estimated latent gradient -> encoder update.
EpochStats train_epoch(EpNetwork& net, const Matrix& data, const EpConfig& cfg,
                       std::mt19937_64& shuffle_rng);

struct TrainTrace {
    std::vector<double> loss;
    std::vector<double> update_norm;
    std::vector<double> max_abs_state;
};

/// Stateful trainer that owns the shuffle RNG so runs can be checkpointed
/// and resumed exactly.
class EpTrainer {
  public:
    EpTrainer(EpNetwork net, EpConfig cfg);

    EpochStats run_epoch(const Matrix& data);
    const TrainTrace& run(const Matrix& data, int epochs);

    const EpNetwork& network() const { return net_; }
    const TrainTrace& trace() const { return trace_; }
    int epoch() const { return epoch_; }

    std::string checkpoint_json() const;
    static EpTrainer from_checkpoint_json(const std::string& text);

  private:
    EpNetwork net_;
    EpConfig cfg_;
    int epoch_ = 0;
    std::mt19937_64 rng_;
    TrainTrace trace_;
};

struct DecoderMap {
    Matrix map;      // limit (or horizon) value of the propagator
    Matrix loadings; // output-rows by input-columns block
    bool converged = false;
    double horizon_used = 0.0;
    std::vector<std::complex<double>> unstable_eigenvalues; // Re >= 0, on failure
};

/// Evaluates the linear-regime propagator exp{K t} of the clamped network
/// (K = J - I with the clamped units' rows zeroed) for t = 1, 2, ... until
/// successive maps differ by < 1e-9 in max norm or `max_horizon` is reached.
/// The loadings block maps clamped inputs to outputs; for a trained decoder
/// this is the factor loading matrix.
DecoderMap decoder_matrix(const EpSubnet& net, double max_horizon = 200.0);

/// B = (A^T A)^{-1} A^T. Throws for rank-deficient A.
Matrix pseudo_inverse_encoder(const Matrix& loadings);

/// P = (1/N) S S^T over latent columns.
Matrix latent_covariance(const Matrix& latents);

/// M = A P A^T (symmetrized). Requires PSD P.
Matrix lowrank_from_autoencoder(const Matrix& loadings, const Matrix& latent_cov);

/// A, P and B read off a trained network: loadings from the decoder
/// propagator, encoder map from the encoder propagator, latent covariance
/// from the encoded samples. psi is left empty (it needs the sample
/// covariance).
FactorModel extract_factor_model(const EpNetwork& net, const Matrix& data, const EpConfig& cfg);

struct BpResult {
    Matrix loadings; // A
    Matrix encoder;  // B
    TrainTrace trace;
};

/// Full-batch gradient descent reference on || X - A B X ||_F^2 with
/// analytic gradients dL/dA = -2 (X - ABX)(BX)^T, dL/dB = -2 A^T (X - ABX) X^T.
/// Throws a step-size error if the loss rises tenfold over its initial value.
BpResult backprop_reference_train(const Matrix& data, int latent_dim, int epochs, double eta,
                                  std::uint64_t seed);

/// Loss trace CSV with columns epoch, loss_ep, update_norm.
void write_loss_trace_csv(std::ostream& out, const TrainTrace& trace);

} // namespace portopt
