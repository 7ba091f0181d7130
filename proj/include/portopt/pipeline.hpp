#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "portopt/ep_autoencoder.hpp"
#include "portopt/frontier.hpp"
#include "portopt/hopfield.hpp"

namespace portopt {

inline constexpr const char* kVersion = "0.1.0";

/// Bad flags or bad usage; maps to exit code 2 (parse/usage) alongside
/// ParseError. Other exceptions map to exit code 1 (numeric failure).
class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct PipelineConfig {
    // inputs
    std::string input;    // returns CSV (covariance, factor)
    std::string cov_path; // covariance CSV (solve, frontier)
    std::string mu_path;  // expected-returns CSV (solve, frontier)
    std::string output_dir = ".";

    // factor stage
    std::string method = "svd"; // ep | bp | svd
    int rank = 10;
    EpConfig ep;
    int bp_epochs = 4000;
    double bp_eta = 5e-4;

    // hopfield solver
    SolverOptions solver;
    double lambda1 = 1.0;
    double lambda2 = 1.0;

    // solve / frontier
    double target_return = 0.0;
    double r_min = 0.0;
    double r_max = 1.0;
    int steps = 21;
    bool warm_start = true;

    // synth
    int synth_assets = 100;
    int synth_rank = 10;
    int synth_samples = 50;
    double synth_noise = 0.1;

    std::uint64_t seed = 0;
};

// Subcommands. Each acquires the output-directory lock, emits its files plus
// a manifest.json with config echo, per-stage wall-clock and FNV-1a digests
// of every emitted file. Return value is the process exit code:
// 0 success, 1 numeric failure, 2 usage/parse error.
int cmd_covariance(const PipelineConfig& cfg); // sample_cov.csv, mu.csv, covariance_summary.json
int cmd_factor(const PipelineConfig& cfg);     // factor_model.json, lowrank_cov.csv,
                                               // loss_trace.csv, residual.csv, mu.csv
int cmd_solve(const PipelineConfig& cfg, double target_return); // portfolio.json [, trace.csv]
int cmd_frontier(const PipelineConfig& cfg);   // frontier.csv, frontier.json, summary.json
int cmd_synth(const PipelineConfig& cfg);      // returns.csv, synth_truth.json

/// Recompute the digests recorded in <dir>/manifest.json against the files on
/// disk. Returns false on any mismatch or missing file.
bool verify_manifest(const std::string& dir);

} // namespace portopt
