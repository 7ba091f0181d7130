#include "portopt/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "portopt/io_util.hpp"

namespace portopt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Exclusive ownership of an output directory for the duration of a command.
class OutputDirLock {
  public:
    explicit OutputDirLock(const std::string& dir) : path_(fs::path(dir) / ".portopt.lock") {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            throw std::runtime_error("output directory '" + dir +
                                     "' is locked by another run (remove " + path_.string() +
                                     " if that run died)");
        }
        ::close(fd);
    }
    ~OutputDirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    OutputDirLock(const OutputDirLock&) = delete;
    OutputDirLock& operator=(const OutputDirLock&) = delete;

  private:
    fs::path path_;
};

struct StageTiming {
    std::string name;
    double seconds;
};

class CommandRun {
  public:
    CommandRun(std::string command, const PipelineConfig& cfg, json config_echo)
        : command_(std::move(command)), dir_(cfg.output_dir), config_echo_(std::move(config_echo)) {
        fs::create_directories(dir_);
        lock_ = std::make_unique<OutputDirLock>(dir_);
    }

    template <typename F>
    auto stage(const std::string& name, F&& body) {
        const auto start = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(body())>) {
            body();
            record(name, start);
        } else {
            auto value = body();
            record(name, start);
            return value;
        }
    }

    std::string path(const std::string& file) const { return (fs::path(dir_) / file).string(); }

    void emit(const std::string& file, std::string_view content) {
        write_file(path(file), content);
        files_.push_back(file);
    }

    void finish(std::uint64_t seed) {
        json manifest;
        manifest["command"] = command_;
        manifest["version"] = kVersion;
        manifest["seed"] = seed;
        manifest["config"] = config_echo_;
        json stages = json::array();
        for (const auto& s : timings_) stages.push_back({{"name", s.name}, {"seconds", s.seconds}});
        manifest["stages"] = stages;
        json digests;
        for (const auto& f : files_) digests[f] = hex64(fnv1a_file(path(f)));
        manifest["files"] = digests;
        write_file(path("manifest.json"), manifest.dump(2) + "\n");
        std::cout << "[" << command_ << "] wrote " << files_.size() << " files to " << dir_
                  << "\n";
    }

  private:
    void record(const std::string& name, std::chrono::steady_clock::time_point start) {
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        timings_.push_back({name, seconds});
        std::cout << "[" << command_ << "] " << name << ": " << seconds << " s\n";
    }

    std::string command_;
    std::string dir_;
    json config_echo_;
    std::unique_ptr<OutputDirLock> lock_;
    std::vector<StageTiming> timings_;
    std::vector<std::string> files_;
};

int guarded(const char* command, const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const UsageError& e) {
        std::cerr << command << ": usage error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << command << ": parse error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << command << ": error: " << e.what() << "\n";
        return 1;
    }
}

json solver_echo(const PipelineConfig& cfg) {
    return json{{"dt", cfg.solver.dt},
                {"total_time", cfg.solver.total_time},
                {"p0", cfg.solver.schedule.p0},
                {"T", cfg.solver.schedule.period},
                {"lambda1", cfg.lambda1},
                {"lambda2", cfg.lambda2},
                {"stride", cfg.solver.trace_stride},
                {"seed", cfg.seed}};
}

json portfolio_json(const Portfolio& p, double target_return, const json& extra = {}) {
    json doc;
    doc["R"] = target_return;
    doc["weights"] = std::vector<double>(p.weights.data(), p.weights.data() + p.weights.size());
    doc["achieved_return"] = p.achieved_return;
    doc["variance"] = p.variance;
    doc["sharpe"] = p.variance > 0.0 ? p.achieved_return / std::sqrt(p.variance) : 0.0;
    doc["return_residual"] = p.return_residual;
    doc["budget_residual"] = p.budget_residual;
    for (auto it = extra.begin(); it != extra.end(); ++it) doc[it.key()] = it.value();
    return doc;
}

ReturnsMatrix load_returns_checked(const std::string& path, const char* which) {
    if (path.empty()) throw UsageError(std::string("missing --") + which);
    return load_returns_file(path);
}

std::string mu_csv_text(const std::vector<std::string>& tickers, const Vector& mu) {
    ReturnsMatrix as_returns;
    as_returns.tickers = tickers;
    as_returns.values = mu;
    std::ostringstream out;
    save_returns(as_returns, out);
    return out.str();
}

CovarianceEstimate load_covariance_file(const std::string& path) {
    if (path.empty()) throw UsageError("missing --cov");
    CovarianceEstimate estimate{read_matrix_csv_file(path), CovProvenance::sample};
    if (estimate.matrix.rows() != estimate.matrix.cols()) {
        throw ParseError(path + ": covariance matrix must be square, got " +
                         std::to_string(estimate.matrix.rows()) + "x" +
                         std::to_string(estimate.matrix.cols()));
    }
    return estimate;
}

ExpectedReturns load_mu_file(const std::string& path) {
    if (path.empty()) throw UsageError("missing --mu");
    ReturnsMatrix as_returns = load_returns_file(path);
    if (as_returns.samples() != 1) {
        throw ParseError(path + ": expected a single row of expected returns, got " +
                         std::to_string(as_returns.samples()));
    }
    return mean_returns(as_returns);
}

json frontier_point_json(const FrontierPoint& point) {
    if (!point.solved) {
        return json{{"R", point.target_return}, {"solved", false}, {"error", point.error}};
    }
    json doc = portfolio_json(point.portfolio, point.target_return);
    doc["sharpe"] = point.sharpe;
    doc["solved"] = true;
    return doc;
}

} // namespace

int cmd_covariance(const PipelineConfig& cfg) {
    return guarded("covariance", [&] {
        json echo{{"input", cfg.input}, {"output_dir", cfg.output_dir}};
        CommandRun run("covariance", cfg, echo);

        ReturnsMatrix raw =
            run.stage("load", [&] { return load_returns_checked(cfg.input, "input"); });
        std::cout << "[covariance] " << raw.assets() << " assets, " << raw.samples()
                  << " samples\n";
        ExpectedReturns mu = mean_returns(raw);
        CovarianceEstimate cov =
            run.stage("covariance", [&] { return sample_covariance(demean(raw)); });

        Eigen::SelfAdjointEigenSolver<Matrix> eig(cov.matrix, Eigen::EigenvaluesOnly);
        json summary{{"assets", raw.assets()},
                     {"samples", raw.samples()},
                     {"min_eigenvalue", eig.eigenvalues().minCoeff()},
                     {"max_eigenvalue", eig.eigenvalues().maxCoeff()},
                     {"provenance", to_string(cov.provenance)}};

        run.stage("write", [&] {
            std::ostringstream cov_text;
            write_matrix_csv(cov_text, cov.matrix);
            run.emit("sample_cov.csv", cov_text.str());
            run.emit("mu.csv", mu_csv_text(raw.tickers, mu.mu));
            run.emit("covariance_summary.json", summary.dump(2) + "\n");
        });
        run.finish(cfg.seed);
    });
}

int cmd_factor(const PipelineConfig& cfg) {
    return guarded("factor", [&] {
        if (cfg.method != "ep" && cfg.method != "bp" && cfg.method != "svd") {
            throw UsageError("--method must be one of ep, bp, svd");
        }
        if (cfg.rank < 1) throw UsageError("--rank must be >= 1");

        json echo{{"input", cfg.input},   {"output_dir", cfg.output_dir},
                  {"method", cfg.method}, {"rank", cfg.rank},
                  {"seed", cfg.seed},     {"epochs", cfg.method == "bp" ? cfg.bp_epochs : cfg.ep.epochs},
                  {"eta", cfg.method == "bp" ? cfg.bp_eta : cfg.ep.eta},
                  {"beta", cfg.ep.beta}};
        CommandRun run("factor", cfg, echo);

        ReturnsMatrix raw = run.stage("load", [&] { return load_returns_checked(cfg.input, "input"); });
        if (cfg.rank > raw.assets()) throw UsageError("--rank exceeds the asset count");
        ReturnsMatrix centered = demean(raw);
        ExpectedReturns mu = mean_returns(raw);
        CovarianceEstimate sample = sample_covariance(centered);

        FactorModel model;
        TrainTrace trace;
        CovProvenance provenance = CovProvenance::lowrank_svd;
        Matrix lowrank;
        std::string checkpoint;

        if (cfg.method == "svd") {
            run.stage("svd", [&] {
                LowRankResult lr = svd_lowrank(sample, cfg.rank);
                lowrank = lr.approx;
                model.loadings = lr.pairs.vectors.leftCols(cfg.rank) *
                                 lr.pairs.values.head(cfg.rank).cwiseMax(0.0).cwiseSqrt().asDiagonal();
                model.latent_cov = Matrix::Identity(cfg.rank, cfg.rank);
                model.rank = cfg.rank;
            });
        } else if (cfg.method == "ep") {
            EpConfig ep = cfg.ep;
            ep.seed = cfg.seed;
            run.stage("train-ep", [&] {
                EpTrainer trainer(make_autoencoder(raw.assets(), cfg.rank, ep.seed), ep);
                trace = trainer.run(centered.values, ep.epochs);
                model = extract_factor_model(trainer.network(), centered.values, ep);
                checkpoint = trainer.checkpoint_json();
            });
            if (!trace.max_abs_state.empty() && trace.max_abs_state.back() > ep.clip) {
                std::cout << "[factor] warning: clipped units during final epoch (|x|_max = "
                          << trace.max_abs_state.back() << ")\n";
            }
            lowrank = lowrank_from_autoencoder(model.loadings, model.latent_cov);
            provenance = CovProvenance::lowrank_ep;
        } else { // bp
            run.stage("train-bp", [&] {
                BpResult bp = backprop_reference_train(centered.values, cfg.rank, cfg.bp_epochs,
                                                       cfg.bp_eta, cfg.seed);
                trace = bp.trace;
                model.loadings = bp.loadings;
                model.encoder = bp.encoder;
                model.latent_cov = latent_covariance(bp.encoder * centered.values);
                model.rank = cfg.rank;
            });
            lowrank = lowrank_from_autoencoder(model.loadings, model.latent_cov);
            provenance = CovProvenance::lowrank_ep;
        }

        model.psi = estimate_psi(sample.matrix, lowrank);
        CovarianceEstimate assembled = assemble_covariance(lowrank, model.psi, provenance);
        Matrix residual = sample.matrix - lowrank;
        residual.diagonal() -= model.psi;
        const double gap = frobenius_gap(sample.matrix, lowrank, model.psi);
        std::cout << "[factor] Frobenius gap ||S - M - Psi||_F^2 = " << gap << "\n";

        run.stage("write", [&] {
            run.emit("factor_model.json", factor_model_to_json(model));
            std::ostringstream cov_text;
            write_matrix_csv(cov_text, assembled.matrix);
            run.emit("lowrank_cov.csv", cov_text.str());
            std::ostringstream trace_text;
            write_loss_trace_csv(trace_text, trace);
            run.emit("loss_trace.csv", trace_text.str());
            std::ostringstream residual_text;
            write_matrix_csv(residual_text, residual.cwiseAbs());
            run.emit("residual.csv", residual_text.str());
            run.emit("mu.csv", mu_csv_text(raw.tickers, mu.mu));
            if (!checkpoint.empty()) run.emit("ep_checkpoint.json", checkpoint);
        });
        run.finish(cfg.seed);
    });
}

int cmd_solve(const PipelineConfig& cfg, double target_return) {
    return guarded("solve", [&] {
        json echo = solver_echo(cfg);
        echo["cov"] = cfg.cov_path;
        echo["mu"] = cfg.mu_path;
        echo["R"] = target_return;
        CommandRun run("solve", cfg, echo);

        CovarianceEstimate cov = run.stage("load", [&] { return load_covariance_file(cfg.cov_path); });
        ExpectedReturns mu = load_mu_file(cfg.mu_path);
        if (mu.mu.size() != cov.matrix.rows()) {
            throw ParseError("expected-returns length does not match the covariance dimension");
        }
        validate_covariance(cov);

        SolverOptions opts = cfg.solver;
        opts.seed = cfg.seed;
        IntegrationResult res;
        Portfolio portfolio = run.stage("solve", [&] {
            return solve_portfolio(cov, mu, target_return, cfg.lambda1, cfg.lambda2, opts, nullptr,
                                   &res);
        });
        std::cout << "[solve] R = " << target_return << ", achieved = " << portfolio.achieved_return
                  << ", variance = " << portfolio.variance << ", residuals = ("
                  << portfolio.return_residual << ", " << portfolio.budget_residual << ")\n";

        run.stage("write", [&] {
            json extra{{"steps", res.steps}, {"converged", res.converged}};
            run.emit("portfolio.json", portfolio_json(portfolio, target_return, extra).dump(2) + "\n");
            if (opts.trace_stride > 0) {
                std::ostringstream trace_text;
                write_trace_csv(trace_text, res.trace);
                run.emit("trace.csv", trace_text.str());
            }
        });
        run.finish(cfg.seed);
    });
}

int cmd_frontier(const PipelineConfig& cfg) {
    int solved_exit = 0;
    const int code = guarded("frontier", [&] {
        if (cfg.steps < 2) throw UsageError("--steps must be >= 2 to trace a frontier");
        if (!(cfg.r_min < cfg.r_max)) throw UsageError("need --r_min < --r_max");

        json echo = solver_echo(cfg);
        echo["cov"] = cfg.cov_path;
        echo["mu"] = cfg.mu_path;
        echo["r_min"] = cfg.r_min;
        echo["r_max"] = cfg.r_max;
        echo["steps"] = cfg.steps;
        echo["warm_start"] = cfg.warm_start;
        CommandRun run("frontier", cfg, echo);

        CovarianceEstimate cov = run.stage("load", [&] { return load_covariance_file(cfg.cov_path); });
        ExpectedReturns mu = load_mu_file(cfg.mu_path);
        if (mu.mu.size() != cov.matrix.rows()) {
            throw ParseError("expected-returns length does not match the covariance dimension");
        }
        validate_covariance(cov);

        SolverOptions opts = cfg.solver;
        opts.seed = cfg.seed;
        opts.trace_stride = 0;
        FrontierCurve curve = run.stage("sweep", [&] {
            return sweep_frontier(cov, mu, cfg.r_min, cfg.r_max, cfg.steps, opts, cfg.lambda1,
                                  cfg.lambda2, cfg.warm_start);
        });

        int solved = 0;
        for (const auto& p : curve.points) solved += p.solved ? 1 : 0;
        std::cout << "[frontier] solved " << solved << "/" << cfg.steps << " points\n";

        run.stage("write", [&] {
            std::ostringstream csv_text;
            write_frontier_csv(csv_text, curve);
            run.emit("frontier.csv", csv_text.str());

            json points = json::array();
            for (const auto& p : curve.points) points.push_back(frontier_point_json(p));
            run.emit("frontier.json", json{{"points", points}}.dump(2) + "\n");

            json summary;
            if (solved > 0) {
                summary["min_variance"] = frontier_point_json(min_variance_point(curve));
                summary["max_sharpe"] = frontier_point_json(max_sharpe_point(curve));
            }
            summary["solved_points"] = solved;
            summary["total_points"] = cfg.steps;
            run.emit("summary.json", summary.dump(2) + "\n");
        });
        run.finish(cfg.seed);
        if (solved * 10 < cfg.steps * 9) solved_exit = 1; // < 90% solved
    });
    return code != 0 ? code : solved_exit;
}

int cmd_synth(const PipelineConfig& cfg) {
    return guarded("synth", [&] {
        if (cfg.synth_assets < 1 || cfg.synth_rank < 1 || cfg.synth_samples < 1) {
            throw UsageError("synth dimensions must be positive");
        }
        if (cfg.synth_rank > cfg.synth_assets) throw UsageError("--rank exceeds --assets");
        if (cfg.synth_noise < 0.0) throw UsageError("--noise_std must be nonnegative");

        json echo{{"assets", cfg.synth_assets},   {"rank", cfg.synth_rank},
                  {"samples", cfg.synth_samples}, {"noise_std", cfg.synth_noise},
                  {"output_dir", cfg.output_dir}, {"seed", cfg.seed}};
        CommandRun run("synth", cfg, echo);

        ReturnsMatrix returns = run.stage("generate", [&] {
            std::mt19937_64 rng(cfg.seed);
            std::normal_distribution<double> gauss(0.0, 1.0);
            Matrix loadings(cfg.synth_assets, cfg.synth_rank);
            const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.synth_rank));
            for (Eigen::Index i = 0; i < loadings.rows(); ++i)
                for (Eigen::Index k = 0; k < loadings.cols(); ++k)
                    loadings(i, k) = scale * gauss(rng);
            const Matrix latent_cov = Matrix::Identity(cfg.synth_rank, cfg.synth_rank);
            const Vector noise = Vector::Constant(cfg.synth_assets, cfg.synth_noise);

            json truth;
            truth["loadings"] = [&] {
                json rows = json::array();
                for (Eigen::Index i = 0; i < loadings.rows(); ++i) {
                    json row = json::array();
                    for (Eigen::Index k = 0; k < loadings.cols(); ++k) row.push_back(loadings(i, k));
                    rows.push_back(std::move(row));
                }
                return rows;
            }();
            truth["latent_cov"] = "identity";
            truth["noise_std"] = cfg.synth_noise;
            truth["seed"] = cfg.seed;
            run.emit("synth_truth.json", truth.dump(2) + "\n");

            return generate_synthetic_returns(loadings, latent_cov, noise, cfg.synth_samples,
                                              cfg.seed + 1);
        });

        run.stage("write", [&] {
            std::ostringstream text;
            save_returns(returns, text);
            run.emit("returns.csv", text.str());
        });
        run.finish(cfg.seed);
    });
}

bool verify_manifest(const std::string& dir) {
    try {
        const json manifest = json::parse(read_file((fs::path(dir) / "manifest.json").string()));
        for (auto it = manifest.at("files").begin(); it != manifest.at("files").end(); ++it) {
            const std::string actual = hex64(fnv1a_file((fs::path(dir) / it.key()).string()));
            if (actual != it.value().get<std::string>()) return false;
        }
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

} // namespace portopt
