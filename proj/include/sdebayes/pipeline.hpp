#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sdebayes/bip.hpp"
#include "sdebayes/config.hpp"
#include "sdebayes/data_prep.hpp"
#include "sdebayes/fem.hpp"
#include "sdebayes/io.hpp"
#include "sdebayes/laplace.hpp"
#include "sdebayes/mcmc.hpp"
#include "sdebayes/optimize.hpp"
#include "sdebayes/prior.hpp"
#include "sdebayes/sde.hpp"

namespace sdebayes {

namespace fs = std::filesystem;

namespace pipeline_detail {

// fixed stream offsets so stages draw independent randomness from one master seed
inline constexpr std::uint64_t kSimulateStream = 11;
inline constexpr std::uint64_t kGevdStream = 13;
inline constexpr std::uint64_t kTuneStream = 17;
inline constexpr std::uint64_t kChainStream = 19;
inline constexpr std::uint64_t kPredictStream = 23;

inline fs::path out_dir(const PipelineConfig& cfg) {
    fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    return dir;
}

inline io::ordered_json base_manifest(const PipelineConfig& cfg, const char* stage) {
    io::ordered_json m;
    m["stage"] = stage;
    m["seed"] = cfg.seed;
    m["output_dir"] = cfg.output_dir;
    m["config"] = cfg.echo;
    return m;
}

inline Mesh1d make_mesh(const PipelineConfig& cfg) {
    return Mesh1d(cfg.domain.left_x, cfg.domain.right_x, cfg.domain.n_cells);
}

inline JointPrior make_prior(const PipelineConfig& cfg, const Mesh1d& mesh) {
    auto component = [&](const ComponentPriorConfig& c) {
        return MaternPrior::from_stats(
            mesh, c.sigma2, c.rho_x, Eigen::VectorXd::Constant(mesh.n_nodes(), c.mean));
    };
    return JointPrior(component(cfg.prior.b), component(cfg.prior.s));
}

// truth coefficients on the mesh; for the multiscale preset this is the
// homogenized effective model
inline ParameterField truth_field(const PipelineConfig& cfg, const Mesh1d& mesh) {
    const SdeModel model = make_model(cfg.model);
    Eigen::VectorXd b(mesh.n_nodes()), s(mesh.n_nodes());
    for (int i = 0; i < mesh.n_nodes(); ++i) {
        const double x = mesh.node(i);
        b[i] = model.drift(x);
        const double w = model.diffusion_sq(x);
        if (w <= 0.0)
            throw config_error("model diffusion_sq is not positive on the mesh");
        s[i] = std::log(w);
    }
    return ParameterField(mesh, b, s);
}

inline FeFunction read_initial_density(const fs::path& dir, const Mesh1d& mesh) {
    const io::CsvTable t = io::read_csv(dir / "initial_density.csv");
    if (t.rows.rows() != mesh.n_nodes())
        throw data_error("initial_density.csv does not match the configured mesh");
    return FeFunction(mesh, t.rows.col(t.col("value")));
}

// smallest step count >= n_min that puts every observation time on the
// uniform time grid over [0, t_end]
inline int resolve_fp_steps(const std::vector<double>& times, double t_end, int n_min) {
    for (int n = std::max(1, n_min); n <= std::max(1, n_min) * 64; ++n) {
        const double dt = t_end / n;
        bool ok = true;
        for (double t : times) {
            const double j = std::round(t / dt);
            if (std::abs(j * dt - t) > 1e-8 * std::max(1.0, std::abs(t))) {
                ok = false;
                break;
            }
        }
        if (ok) return n;
    }
    throw config_error(
        "no fp time grid near solver.fp_n_time_steps hits all snapshot times; "
        "choose snapshots with a common spacing");
}

inline std::unique_ptr<MisfitModel> make_misfit(const PipelineConfig& cfg, const Mesh1d& mesh,
                                                const ObservationSet& obs, const fs::path& dir) {
    if (obs.kind == "mfpt")
        return std::make_unique<MfptMisfit>(mesh, obs, cfg.solver.full_newton);
    const FeFunction p0 = read_initial_density(dir, mesh);
    if (obs.times.empty()) throw data_error("fp observations carry no times");
    const double t_end = obs.times.back();
    const int n_steps = resolve_fp_steps(obs.times, t_end, cfg.solver.fp_n_time_steps);
    return std::make_unique<FpMisfit>(mesh, obs, p0, t_end, n_steps, cfg.solver.full_newton);
}

inline ParameterField field_from_stacked(const Mesh1d& mesh, const Eigen::VectorXd& m) {
    return ParameterField::from_stacked(mesh, m);
}

inline Eigen::MatrixXd node_table(const Mesh1d& mesh, const std::vector<Eigen::VectorXd>& cols) {
    Eigen::MatrixXd rows(mesh.n_nodes(), 2 + cols.size());
    for (int i = 0; i < mesh.n_nodes(); ++i) {
        rows(i, 0) = i;
        rows(i, 1) = mesh.node(i);
        for (std::size_t c = 0; c < cols.size(); ++c) rows(i, 2 + c) = cols[c][i];
    }
    return rows;
}

struct LaplaceArtifacts {
    ParameterField m_map;
    Eigen::VectorXd eigvals;
    Eigen::MatrixXd vectors;
    double truncate_below = 0.1;
};

inline void write_laplace(const fs::path& dir, const LaplaceArtifacts& art) {
    io::ordered_json j;
    j["m_map_b"] = io::to_json(art.m_map.b);
    j["m_map_s"] = io::to_json(art.m_map.s);
    j["eigvals"] = io::to_json(art.eigvals);
    io::ordered_json cols = io::ordered_json::array();
    for (Eigen::Index c = 0; c < art.vectors.cols(); ++c)
        cols.push_back(io::to_json(art.vectors.col(c)));
    j["vectors"] = cols;
    j["truncate_below"] = art.truncate_below;
    io::save_json(dir / "laplace.json", j);
}

inline LaplaceArtifacts read_laplace(const fs::path& dir, const Mesh1d& mesh) {
    const io::ordered_json j = io::load_json(dir / "laplace.json");
    for (const char* key : {"m_map_b", "m_map_s", "eigvals", "vectors", "truncate_below"})
        if (!j.contains(key))
            throw data_error("laplace.json missing key '" + std::string(key) + "'");
    const Eigen::VectorXd b = io::vector_from_json(j["m_map_b"], "m_map_b");
    const Eigen::VectorXd s = io::vector_from_json(j["m_map_s"], "m_map_s");
    if (b.size() != mesh.n_nodes() || s.size() != mesh.n_nodes())
        throw data_error("laplace.json does not match the configured mesh");
    LaplaceArtifacts art{ParameterField(mesh, b, s), io::vector_from_json(j["eigvals"], "eigvals"),
                         Eigen::MatrixXd(), j["truncate_below"].get<double>()};
    const auto& cols = j["vectors"];
    if (!cols.is_array()) throw data_error("laplace.json vectors must be an array");
    art.vectors.resize(2 * mesh.n_nodes(), static_cast<Eigen::Index>(cols.size()));
    for (Eigen::Index c = 0; c < art.vectors.cols(); ++c) {
        const Eigen::VectorXd col = io::vector_from_json(cols[c], "vectors");
        if (col.size() != art.vectors.rows())
            throw data_error("laplace.json vector has the wrong length");
        art.vectors.col(c) = col;
    }
    return art;
}

inline ParameterField read_map_field(const fs::path& dir, const Mesh1d& mesh) {
    const io::CsvTable t = io::read_csv(dir / "map.csv");
    if (t.rows.rows() != mesh.n_nodes())
        throw data_error("map.csv does not match the configured mesh");
    return ParameterField(mesh, t.rows.col(t.col("b")), t.rows.col(t.col("s")));
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------

inline void cmd_simulate(const PipelineConfig& cfg) {
    namespace pd = pipeline_detail;
    const fs::path dir = pd::out_dir(cfg);
    const std::uint64_t stage_seed = derive_stream(cfg.seed, pd::kSimulateStream);
    io::ordered_json manifest = pd::base_manifest(cfg, "simulate");
    manifest["stage_seed"] = stage_seed;

    if (cfg.data.kind == "mfpt") {
        if (cfg.model.preset == "multiscale")
            throw config_error(
                "the multiscale preset produces trajectory snapshots; use data.kind 'fp'");
        const SdeModel model = make_model(cfg.model);
        const Eigen::VectorXd sites =
            Eigen::VectorXd::LinSpaced(cfg.data.n_sites, cfg.site_lo(), cfg.site_hi());
        std::vector<ExitTimeSample> samples;
        long censored = 0, total = 0;
        for (int i = 0; i < sites.size(); ++i) {
            samples.push_back(simulate_exit_times(model, sites[i], cfg.domain.left_x,
                                                  cfg.domain.right_x, cfg.data.n_traj,
                                                  cfg.data.dt_time, cfg.data.max_steps,
                                                  derive_stream(stage_seed, i)));
            censored += samples.back().censored_count;
            total += samples.back().n_traj();
        }
        if (censored > 0 && static_cast<double>(censored) / total >= 1e-3)
            warn("censored exit-time fraction " + std::to_string((double)censored / total) +
                 " >= 0.1%; MFPT estimates are biased low");
        io::write_exit_times(dir / "exit_times.csv", samples);
        manifest["model"] = model.name;
        manifest["n_sites"] = cfg.data.n_sites;
        manifest["n_traj_per_site"] = cfg.data.n_traj;
        manifest["dt_time"] = cfg.data.dt_time;
        manifest["max_steps"] = cfg.data.max_steps;
        manifest["censored_total"] = censored;
        manifest["outputs"] = {"exit_times.csv"};
    } else {
        const InitSpec init = cfg.data.init.spec();
        TrajectoryEnsemble ens;
        if (cfg.model.preset == "multiscale") {
            ens = simulate_multiscale(cfg.model.multiscale, init, cfg.data.n_traj,
                                      cfg.data.n_steps, cfg.data.dt_time,
                                      cfg.data.snapshots_time, stage_seed);
            manifest["model"] = "multiscale";
        } else {
            const SdeModel model = make_model(cfg.model);
            ens = simulate_ensemble(model, init, cfg.data.n_traj, cfg.data.n_steps,
                                    cfg.data.dt_time, cfg.data.snapshots_time, stage_seed);
            manifest["model"] = model.name;
        }
        io::write_trajectories(dir / "trajectories.csv", ens);
        manifest["n_traj"] = cfg.data.n_traj;
        manifest["n_steps"] = cfg.data.n_steps;
        manifest["dt_time"] = cfg.data.dt_time;
        manifest["snapshots_time"] = cfg.data.snapshots_time;
        manifest["outputs"] = {"trajectories.csv"};
    }
    io::save_json(dir / "simulate_manifest.json", manifest);
}

inline void cmd_prepare(const PipelineConfig& cfg) {
    namespace pd = pipeline_detail;
    const fs::path dir = pd::out_dir(cfg);
    io::ordered_json manifest = pd::base_manifest(cfg, "prepare");

    if (cfg.data.kind == "mfpt") {
        const auto samples = io::read_exit_times(dir / "exit_times.csv");
        MomentData d = mfpt_moment_data(samples);
        if (cfg.data.n_moments > 2)
            throw config_error("data.n_moments > 2 is not supported by the moment estimators");
        ObservationSet obs = build_observation_set(d, cfg.data.var_floor);
        if (cfg.data.n_moments == 1) {
            obs.n_moments = 1;
            obs.y = obs.y.head(obs.q()).eval();
            obs.gamma_diag = obs.gamma_diag.head(obs.q()).eval();
        }
        io::ordered_json meta;
        meta["n_sites"] = static_cast<int>(samples.size());
        meta["sub_ensemble_n1"] = d.n1;
        meta["sub_ensemble_n2"] = d.n2;
        meta["var_floor"] = cfg.data.var_floor;
        io::write_observations(dir / "observations.json", obs, meta);
        manifest["outputs"] = {"observations.json"};
    } else {
        const TrajectoryEnsemble ens = io::read_trajectories(dir / "trajectories.csv");
        if (ens.snapshot_times.size() < 2)
            throw data_error("fp preparation needs at least two snapshots");
        const Eigen::VectorXd grid =
            Eigen::VectorXd::LinSpaced(cfg.data.grid_count, cfg.grid_lo(), cfg.grid_hi());
        DensityData all = density_data(ens, grid, cfg.data.bandwidth_x);

        // the first snapshot provides the initial condition; later snapshots are
        // data on a clock that starts there
        const double t0 = all.times.front();
        DensityData rest = all;
        rest.times.assign(all.times.begin() + 1, all.times.end());
        for (double& t : rest.times) t -= t0;
        rest.p_hat = all.p_hat.rightCols(all.p_hat.cols() - 1).eval();
        rest.var_hat = all.var_hat.rightCols(all.var_hat.cols() - 1).eval();
        ObservationSet obs = build_observation_set(rest, cfg.data.var_floor);

        const Mesh1d mesh = pd::make_mesh(cfg);
        Eigen::VectorXd nodes(mesh.n_nodes());
        for (int i = 0; i < mesh.n_nodes(); ++i) nodes[i] = mesh.node(i);
        auto [p0, p0_var] = kde_estimate(ens.snapshot(0), nodes, cfg.data.bandwidth_x);
        io::write_csv(dir / "initial_density.csv", {"node", "x", "value"},
                      pd::node_table(mesh, {p0}));

        io::ordered_json meta;
        meta["bandwidth_x"] = cfg.data.bandwidth_x;
        meta["n_traj"] = ens.n_traj;
        meta["t0_time"] = t0;
        meta["var_floor"] = cfg.data.var_floor;
        io::write_observations(dir / "observations.json", obs, meta);
        manifest["t0_time"] = t0;
        manifest["outputs"] = {"observations.json", "initial_density.csv"};
    }
    io::save_json(dir / "prepare_manifest.json", manifest);
}

inline void cmd_solve(const PipelineConfig& cfg) {
    namespace pd = pipeline_detail;
    const fs::path dir = pd::out_dir(cfg);
    const Mesh1d mesh = pd::make_mesh(cfg);
    const ParameterField truth = pd::truth_field(cfg, mesh);
    io::ordered_json manifest = pd::base_manifest(cfg, "solve");
    std::vector<std::string> outputs;

    if (cfg.data.kind == "mfpt") {
        const PdeSolution sol = solve_mfpt_hierarchy(mesh, truth, cfg.data.n_moments);
        for (int m = 0; m < sol.n_columns(); ++m) {
            const std::string name = "solution_tau" + std::to_string(m + 1) + ".csv";
            io::write_csv(dir / name, {"node", "value"}, [&] {
                Eigen::MatrixXd rows(mesh.n_nodes(), 2);
                for (int i = 0; i < mesh.n_nodes(); ++i) {
                    rows(i, 0) = i;
                    rows(i, 1) = sol.fields(i, m);
                }
                return rows;
            }());
            outputs.push_back(name);
        }
    } else {
        if (cfg.data.init.kind != "gaussian")
            throw config_error("solve: fp forward solve needs a gaussian data.init density");
        const double mean = cfg.data.init.mean_x, sd = cfg.data.init.sd_x;
        if (sd <= 0.0) throw config_error("solve: data.init.sd_x must be positive");
        const FeFunction p0 = interpolate(mesh, [&](double x) {
            return std::exp(-0.5 * sq((x - mean) / sd)) / (sd * std::sqrt(2.0 * M_PI));
        });
        const double t_end = cfg.data.snapshots_time.back();
        const int n_steps =
            pd::resolve_fp_steps(cfg.data.snapshots_time, t_end, cfg.solver.fp_n_time_steps);
        const PdeSolution sol = solve_fokker_planck(mesh, truth, p0, t_end, n_steps);
        Eigen::MatrixXd rows(
            static_cast<Eigen::Index>(mesh.n_nodes()) * cfg.data.snapshots_time.size(), 3);
        Eigen::Index r = 0;
        for (double t : cfg.data.snapshots_time) {
            const int j = time_index_on_grid(sol.times, t);
            for (int i = 0; i < mesh.n_nodes(); ++i) {
                rows(r, 0) = i;
                rows(r, 1) = sol.fields(i, j);
                rows(r, 2) = t;
                ++r;
            }
        }
        io::write_csv(dir / "solution_fp.csv", {"node", "value", "time"}, rows);
        outputs.push_back("solution_fp.csv");
    }
    manifest["outputs"] = outputs;
    io::save_json(dir / "solve_manifest.json", manifest);
}

inline void cmd_infer(const PipelineConfig& cfg) {
    namespace pd = pipeline_detail;
    const fs::path dir = pd::out_dir(cfg);
    const Mesh1d mesh = pd::make_mesh(cfg);
    const ObservationSet obs = io::read_observations(dir / "observations.json");
    auto model = pd::make_misfit(cfg, mesh, obs, dir);
    const JointPrior prior = pd::make_prior(cfg, mesh);

    io::ordered_json newton_log = io::ordered_json::array();
    MapOptions mopts;
    mopts.tol_grad_rel = cfg.solver.tol_grad_rel;
    mopts.max_newton = cfg.solver.max_newton;
    mopts.cg_max = cfg.solver.cg_max;
    mopts.on_iteration = [&](const NewtonRecord& rec) {
        io::ordered_json r;
        r["iter"] = rec.iter;
        r["cost"] = rec.cost;
        r["grad_norm"] = rec.grad_norm;
        r["cg_iters"] = rec.cg_iters;
        r["step"] = rec.step;
        newton_log.push_back(r);
    };
    MapProblem problem(*model, prior,
                       pd::field_from_stacked(mesh, prior.mean()));
    const MapResult map = map_estimate(problem, mopts);
    io::save_json(dir / "newton_log.json", newton_log);
    io::write_csv(dir / "map.csv", {"node", "x", "b", "s"},
                  pd::node_table(mesh, {map.m_map.b, map.m_map.s}));

    auto eval = model->evaluate(map.m_map.stacked(), true);
    auto hvp = [&](const Eigen::VectorXd& v) { return model->hessian_vector(*eval, v); };
    const int n = prior.n();
    const int rank = std::min(cfg.laplace.rank, n - cfg.laplace.oversample);
    if (rank < 1) throw config_error("laplace.rank/oversample leave no admissible sketch size");
    NormalStream grng(derive_stream(cfg.seed, pd::kGevdStream));
    const GevdResult gevd =
        randomized_gevd(hvp, prior, rank, cfg.laplace.oversample, cfg.laplace.power_iters, &grng);
    const LowRankPosterior post(map.m_map, prior, gevd.eigvals, gevd.vectors,
                                cfg.laplace.truncate_below);

    Eigen::MatrixXd spectrum(gevd.eigvals.size(), 2);
    for (Eigen::Index i = 0; i < gevd.eigvals.size(); ++i) {
        spectrum(i, 0) = static_cast<double>(i);
        spectrum(i, 1) = gevd.eigvals[i];
    }
    io::write_csv(dir / "spectrum.csv", {"index", "lambda"}, spectrum);

    const Eigen::VectorXd var = post.pointwise_variance_exact();
    const Eigen::VectorXd var_b = var.head(mesh.n_nodes()), var_s = var.tail(mesh.n_nodes());
    io::write_csv(dir / "pointwise_variance.csv", {"node", "x", "var_b", "var_s"},
                  pd::node_table(mesh, {var_b, var_s}));
    const Eigen::VectorXd half_b = 1.96 * var_b.cwiseSqrt(), half_s = 1.96 * var_s.cwiseSqrt();
    io::write_csv(dir / "bands.csv",
                  {"node", "x", "b_map", "b_lo", "b_hi", "s_map", "s_lo", "s_hi"},
                  pd::node_table(mesh, {map.m_map.b, map.m_map.b - half_b, map.m_map.b + half_b,
                                        map.m_map.s, map.m_map.s - half_s, map.m_map.s + half_s}));

    pd::write_laplace(dir, {map.m_map, gevd.eigvals, gevd.vectors, cfg.laplace.truncate_below});

    io::ordered_json manifest = pd::base_manifest(cfg, "infer");
    manifest["gevd_seed"] = derive_stream(cfg.seed, pd::kGevdStream);
    manifest["converged"] = map.converged;
    manifest["newton_iters"] = map.newton_iters;
    manifest["total_cg_iters"] = map.total_cg_iters;
    manifest["cost_final"] = map.cost_history.back();
    manifest["grad_norm_final"] = map.grad_norm_history.back();
    manifest["misfit_at_map"] = model->evaluate(map.m_map.stacked(), false)->value;
    manifest["laplace_rank_kept"] = post.rank();
    manifest["outputs"] = {"map.csv", "newton_log.json", "spectrum.csv",
                           "pointwise_variance.csv", "bands.csv", "laplace.json"};
    io::save_json(dir / "infer_manifest.json", manifest);
    if (!map.converged)
        warn("MAP optimization stopped before reaching the gradient tolerance");
}

inline void cmd_sample(const PipelineConfig& cfg) {
    namespace pd = pipeline_detail;
    const fs::path dir = pd::out_dir(cfg);
    const Mesh1d mesh = pd::make_mesh(cfg);
    const ObservationSet obs = io::read_observations(dir / "observations.json");
    auto model = pd::make_misfit(cfg, mesh, obs, dir);
    const JointPrior prior = pd::make_prior(cfg, mesh);
    const auto art = pd::read_laplace(dir, mesh);
    const LowRankPosterior post(art.m_map, prior, art.eigvals, art.vectors, art.truncate_below);

    double h = cfg.mcmc.h;
    io::ordered_json manifest = pd::base_manifest(cfg, "sample");
    if (cfg.mcmc.tune) {
        const auto tuned =
            tune_step_size(*model, prior, post, art.m_map, h, cfg.mcmc.tune_steps,
                           cfg.mcmc.tune_target, derive_stream(cfg.seed, pd::kTuneStream));
        manifest["tune_seed"] = derive_stream(cfg.seed, pd::kTuneStream);
        manifest["tune_acceptance"] = tuned.acceptance;
        h = tuned.h;
    }

    ChainOptions copts;
    copts.n_steps = cfg.mcmc.n_steps;
    copts.burn_in = cfg.mcmc.burn_in;
    copts.thin = cfg.mcmc.thin;
    copts.h = h;
    copts.seed = derive_stream(cfg.seed, pd::kChainStream);
    const ChainResult chain = run_chain(*model, prior, post, art.m_map, copts);

    const int n_nodes = mesh.n_nodes();
    std::vector<std::string> header{"iter"};
    for (int i = 0; i < n_nodes; ++i) header.push_back("b_" + std::to_string(i));
    for (int i = 0; i < n_nodes; ++i) header.push_back("s_" + std::to_string(i));
    Eigen::MatrixXd rows(chain.samples.cols(), 1 + chain.samples.rows());
    for (Eigen::Index k = 0; k < chain.samples.cols(); ++k) {
        rows(k, 0) = static_cast<double>(copts.burn_in + 1 + k * copts.thin);
        rows.row(k).tail(chain.samples.rows()) = chain.samples.col(k).transpose();
    }
    io::write_csv(dir / "chain.csv", header, rows);

    Eigen::MatrixXd phi(chain.phi_trace.size(), 2);
    for (Eigen::Index i = 0; i < chain.phi_trace.size(); ++i) {
        phi(i, 0) = static_cast<double>(i + 1);
        phi(i, 1) = chain.phi_trace[i];
    }
    io::write_csv(dir / "phi_trace.csv", {"iter", "phi"}, phi);

    manifest["h"] = chain.h;
    manifest["chain_seed"] = chain.seed;
    manifest["acceptance_rate"] = chain.acceptance_rate;
    manifest["n_accepted"] = chain.n_accepted;
    manifest["n_steps"] = copts.n_steps;
    manifest["burn_in"] = copts.burn_in;
    manifest["thin"] = copts.thin;
    manifest["n_retained"] = static_cast<int>(chain.samples.cols());
    manifest["outputs"] = {"chain.csv", "phi_trace.csv"};
    io::save_json(dir / "chain_manifest.json", manifest);
}

namespace pipeline_detail {

// forward observable curves for a set of parameter fields, one matrix per
// output block (MFPT moment or FP snapshot time)
struct PredictiveCurves {
    std::vector<std::string> block_names;
    std::vector<Eigen::MatrixXd> curves;  // n_nodes x n_fields
};

inline PredictiveCurves predictive_curves(const PipelineConfig& cfg, const Mesh1d& mesh,
                                          const fs::path& dir,
                                          const std::vector<ParameterField>& fields) {
    PredictiveCurves out;
    if (cfg.data.kind == "mfpt") {
        for (int m = 0; m < cfg.data.n_moments; ++m) {
            out.block_names.push_back("tau" + std::to_string(m + 1));
            out.curves.emplace_back(mesh.n_nodes(), fields.size());
        }
        for (std::size_t f = 0; f < fields.size(); ++f) {
            const PdeSolution sol = solve_mfpt_hierarchy(mesh, fields[f], cfg.data.n_moments);
            for (int m = 0; m < cfg.data.n_moments; ++m)
                out.curves[m].col(f) = sol.fields.col(m);
        }
    } else {
        const ObservationSet obs = io::read_observations(dir / "observations.json");
        const FeFunction p0 = read_initial_density(dir, mesh);
        if (obs.times.empty()) throw data_error("fp observations carry no times");
        const double t_end = obs.times.back();
        const int n_steps = resolve_fp_steps(obs.times, t_end, cfg.solver.fp_n_time_steps);
        for (std::size_t j = 0; j < obs.times.size(); ++j) {
            out.block_names.push_back("fp_t" + std::to_string(j + 1));
            out.curves.emplace_back(mesh.n_nodes(), fields.size());
        }
        for (std::size_t f = 0; f < fields.size(); ++f) {
            const PdeSolution sol = solve_fokker_planck(mesh, fields[f], p0, t_end, n_steps);
            for (std::size_t j = 0; j < obs.times.size(); ++j)
                out.curves[j].col(f) =
                    sol.fields.col(time_index_on_grid(sol.times, obs.times[j]));
        }
    }
    return out;
}

}  // namespace pipeline_detail

inline void cmd_predict(const PipelineConfig& cfg) {
    namespace pd = pipeline_detail;
    const fs::path dir = pd::out_dir(cfg);
    const Mesh1d mesh = pd::make_mesh(cfg);
    const JointPrior prior = pd::make_prior(cfg, mesh);
    const ParameterField m_map = pd::read_map_field(dir, mesh);
    io::ordered_json manifest = pd::base_manifest(cfg, "predict");

    std::string source = cfg.predict.source;
    if (source == "auto")
        source = fs::exists(dir / "chain.csv") ? "chain" : "laplace";

    // draw parameter fields from the requested posterior representation
    std::vector<ParameterField> draws;
    if (cfg.predict.n_draws > 0) {
        if (source == "chain") {
            const io::CsvTable t = io::read_csv(dir / "chain.csv");
            const Eigen::Index n_kept = t.rows.rows();
            if (t.rows.cols() != 1 + 2 * mesh.n_nodes())
                throw data_error("chain.csv does not match the configured mesh");
            const Eigen::Index take = std::min<Eigen::Index>(cfg.predict.n_draws, n_kept);
            for (Eigen::Index k = 0; k < take; ++k) {
                // spread the draws evenly across the retained chain
                const Eigen::Index row = (n_kept - 1) * k / std::max<Eigen::Index>(1, take - 1);
                draws.push_back(pd::field_from_stacked(
                    mesh, t.rows.row(row).tail(2 * mesh.n_nodes()).transpose()));
            }
        } else {
            const auto art = pd::read_laplace(dir, mesh);
            const LowRankPosterior post(art.m_map, prior, art.eigvals, art.vectors,
                                        art.truncate_below);
            NormalStream rng(derive_stream(cfg.seed, pd::kPredictStream));
            for (int k = 0; k < cfg.predict.n_draws; ++k) draws.push_back(post.sample(rng));
            manifest["predict_seed"] = derive_stream(cfg.seed, pd::kPredictStream);
        }
    }

    std::vector<ParameterField> fields;
    fields.push_back(pd::field_from_stacked(mesh, prior.mean()));
    fields.push_back(m_map);
    int n_used = 0;
    for (const auto& d : draws) {
        try {
            // probe the draw before committing to it: degenerate diffusion draws
            // cannot be pushed through the forward solver
            checked_sigma_sq(d);
            fields.push_back(d);
            ++n_used;
        } catch (const numerical_error&) {
            warn("skipping a posterior draw with a degenerate diffusion coefficient");
        }
    }

    const auto curves = pd::predictive_curves(cfg, mesh, dir, fields);
    std::vector<std::string> outputs;
    for (std::size_t blk = 0; blk < curves.curves.size(); ++blk) {
        const Eigen::MatrixXd& c = curves.curves[blk];
        Eigen::VectorXd mean(mesh.n_nodes()), lo(mesh.n_nodes()), hi(mesh.n_nodes());
        if (n_used >= 2) {
            const auto block = c.rightCols(n_used);
            mean = block.rowwise().mean();
            const Eigen::VectorXd sd =
                ((block.colwise() - mean).array().square().rowwise().sum() / (n_used - 1))
                    .sqrt()
                    .matrix();
            lo = mean - 1.96 * sd;
            hi = mean + 1.96 * sd;
        } else {
            mean = c.col(1);
            lo = mean;
            hi = mean;
        }
        const std::string name = "predictive_" + curves.block_names[blk] + ".csv";
        io::write_csv(dir / name,
                      {"node", "x", "prior_mean", "map", "draw_mean", "draw_lo", "draw_hi"},
                      pd::node_table(mesh, {c.col(0), c.col(1), mean, lo, hi}));
        outputs.push_back(name);

        if (n_used > 0) {
            std::vector<std::string> header{"node", "x"};
            std::vector<Eigen::VectorXd> cols;
            for (int k = 0; k < n_used; ++k) {
                header.push_back("draw_" + std::to_string(k));
                cols.push_back(c.col(2 + k));
            }
            const std::string draws_name =
                "predictive_draws_" + curves.block_names[blk] + ".csv";
            io::write_csv(dir / draws_name, header, pd::node_table(mesh, cols));
            outputs.push_back(draws_name);
        }
    }

    manifest["source"] = source;
    manifest["n_draws_requested"] = cfg.predict.n_draws;
    manifest["n_draws_used"] = n_used;
    manifest["outputs"] = outputs;
    io::save_json(dir / "predict_manifest.json", manifest);
}

}  // namespace sdebayes
