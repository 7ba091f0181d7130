#include <CLI11.hpp>

#include "portopt/pipeline.hpp"

namespace {

void add_common(CLI::App* cmd, portopt::PipelineConfig& cfg) {
    cmd->add_option("--output-dir", cfg.output_dir, "Directory for emitted files");
    cmd->add_option("--seed", cfg.seed, "RNG seed shared by every stage");
    cmd->set_config("--config", "", "Key=value config file; command-line flags win");
}

void add_solver(CLI::App* cmd, portopt::PipelineConfig& cfg) {
    cmd->add_option("--dt", cfg.solver.dt, "Euler step");
    cmd->add_option("--total_time", cfg.solver.total_time, "Integration horizon");
    cmd->add_option("--p0", cfg.solver.schedule.p0, "Initial annealing value");
    cmd->add_option("--T", cfg.solver.schedule.period, "Annealing period");
    cmd->add_option("--lambda1", cfg.lambda1, "Return-constraint penalty");
    cmd->add_option("--lambda2", cfg.lambda2, "Budget-constraint penalty");
    cmd->add_option("--stride", cfg.solver.trace_stride, "Trace stride (0 = no trace)");
    cmd->add_option("--cov", cfg.cov_path, "Covariance CSV");
    cmd->add_option("--mu", cfg.mu_path, "Expected-returns CSV (ticker header + one row)");
}

} // namespace

int main(int argc, char** argv) {
    portopt::PipelineConfig cfg;
    double target_return = 0.0;

    CLI::App app{"Hopfield-network portfolio pipeline: covariance estimation, "
                 "low-rank factor models and efficient frontiers"};
    app.require_subcommand(1);

    auto* covariance = app.add_subcommand("covariance", "Sample covariance and mean returns");
    covariance->add_option("--input", cfg.input, "Returns CSV (ticker header, rows = samples)")
        ->required();
    add_common(covariance, cfg);

    auto* factor = app.add_subcommand("factor", "Low-rank factor model (ep | bp | svd)");
    factor->add_option("--input", cfg.input, "Returns CSV")->required();
    factor->add_option("--method", cfg.method, "ep | bp | svd");
    factor->add_option("--rank", cfg.rank, "Factor rank r");
    factor->add_option("--beta", cfg.ep.beta, "EP clamping factor");
    factor->add_option("--eta", cfg.ep.eta, "EP learning rate");
    factor->add_option("--clip", cfg.ep.clip, "Activation clip bound");
    factor->add_option("--relax_dt", cfg.ep.relax_dt, "Relaxation step");
    factor->add_option("--relax_steps", cfg.ep.relax_steps, "Relaxation iteration cap");
    factor->add_option("--epochs", cfg.ep.epochs, "EP training epochs");
    factor->add_option("--bp_epochs", cfg.bp_epochs, "BP training epochs");
    factor->add_option("--bp_eta", cfg.bp_eta, "BP learning rate");
    add_common(factor, cfg);

    auto* solve = app.add_subcommand("solve", "Single Hopfield portfolio solve at target R");
    solve->add_option("--R", target_return, "Target return")->required();
    add_solver(solve, cfg);
    add_common(solve, cfg);

    auto* frontier = app.add_subcommand("frontier", "Sweep target returns along the frontier");
    frontier->add_option("--r_min", cfg.r_min, "Lowest target return");
    frontier->add_option("--r_max", cfg.r_max, "Highest target return");
    frontier->add_option("--steps", cfg.steps, "Grid points (>= 2)");
    frontier->add_option("--warm_start", cfg.warm_start,
                         "Start each point from the previous solution (default true)");
    add_solver(frontier, cfg);
    add_common(frontier, cfg);

    auto* synth = app.add_subcommand("synth", "Generate factor-model returns");
    synth->add_option("--assets", cfg.synth_assets, "Asset count n");
    synth->add_option("--rank", cfg.synth_rank, "True latent rank r");
    synth->add_option("--samples", cfg.synth_samples, "Sample count N");
    synth->add_option("--noise_std", cfg.synth_noise, "Idiosyncratic noise standard deviation");
    add_common(synth, cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (covariance->parsed()) return portopt::cmd_covariance(cfg);
    if (factor->parsed()) return portopt::cmd_factor(cfg);
    if (solve->parsed()) return portopt::cmd_solve(cfg, target_return);
    if (frontier->parsed()) return portopt::cmd_frontier(cfg);
    if (synth->parsed()) return portopt::cmd_synth(cfg);
    return 2;
}
