#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdebayes/common.hpp"
#include "sdebayes/io.hpp"
#include "sdebayes/sde.hpp"

namespace sdebayes {

using io::ordered_json;

namespace detail {

// Tracks which keys of a JSON object were consumed; leftovers are schema errors.
class Section {
public:
    Section(const ordered_json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw config_error("config section '" + path_ + "' must be an object");
    }

    bool has(const char* key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw config_error("config key '" + path_ + "." + key + "' has the wrong type");
        }
    }

    ordered_json child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? j_.at(key) : ordered_json::object();
    }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key()))
                throw config_error("unknown config key '" + path_ + "." + item.key() + "'");
    }

private:
    const ordered_json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace detail

struct ModelConfig {
    std::string preset = "single-scale";  // single-scale | multiscale | ou | brownian | custom
    MultiscaleParams multiscale;
    std::vector<double> drift_poly{0.0};
    std::vector<double> diffusion_sq_poly{1.0};
    double ou_theta = 1.0;
    double ou_sigma_sq = 1.0;
    double brownian_sigma_sq = 2.0;
};

struct DomainConfig {
    double left_x = -1.0;
    double right_x = 1.0;
    int n_cells = 200;
};

struct InitConfig {
    std::string kind = "gaussian";  // point | gaussian
    double mean_x = 0.0;
    double sd_x = 0.5;

    InitSpec spec() const {
        if (kind == "point") return InitSpec::point(mean_x);
        if (kind == "gaussian") return InitSpec::gaussian(mean_x, sd_x);
        throw config_error("data.init.kind must be 'point' or 'gaussian'");
    }
};

struct DataConfig {
    std::string kind = "mfpt";  // mfpt | fp
    // mfpt
    int n_sites = 21;
    double site_lo_x = std::nan("");  // default: domain shrunk by 5% per side
    double site_hi_x = std::nan("");
    long n_traj = 200;
    double dt_time = 1e-3;
    long max_steps = 2000000;
    int n_moments = 2;
    // fp
    long n_steps = 5000;
    std::vector<double> snapshots_time;
    double bandwidth_x = 0.05;
    int grid_count = 41;
    double grid_lo_x = std::nan("");
    double grid_hi_x = std::nan("");
    InitConfig init;
    double var_floor = 1e-8;
};

struct ComponentPriorConfig {
    double sigma2 = 1.0;
    double rho_x = 1.0;
    double mean = 0.0;
};

struct PriorConfig {
    ComponentPriorConfig b;
    ComponentPriorConfig s;
};

struct SolverConfig {
    double tol_grad_rel = 1e-6;
    int max_newton = 30;
    int cg_max = 200;
    bool full_newton = false;
    int fp_n_time_steps = 100;
};

struct LaplaceConfig {
    int rank = 20;
    int oversample = 10;
    int power_iters = 1;
    double truncate_below = 0.1;
};

struct McmcConfig {
    int n_steps = 2000;
    int burn_in = 500;
    int thin = 1;
    double h = 0.5;
    bool tune = false;
    int tune_steps = 500;
    double tune_target = 0.6;
};

struct PredictConfig {
    int n_draws = 20;
    std::string source = "auto";  // auto | chain | laplace
};

struct PipelineConfig {
    ModelConfig model;
    DomainConfig domain;
    DataConfig data;
    PriorConfig prior;
    SolverConfig solver;
    LaplaceConfig laplace;
    McmcConfig mcmc;
    PredictConfig predict;
    std::string output_dir = "out";
    std::uint64_t seed = 1;
    ordered_json echo = ordered_json::object();

    double site_lo() const {
        return std::isnan(data.site_lo_x)
                   ? domain.left_x + 0.05 * (domain.right_x - domain.left_x)
                   : data.site_lo_x;
    }
    double site_hi() const {
        return std::isnan(data.site_hi_x)
                   ? domain.right_x - 0.05 * (domain.right_x - domain.left_x)
                   : data.site_hi_x;
    }
    double grid_lo() const {
        return std::isnan(data.grid_lo_x)
                   ? domain.left_x + 0.05 * (domain.right_x - domain.left_x)
                   : data.grid_lo_x;
    }
    double grid_hi() const {
        return std::isnan(data.grid_hi_x)
                   ? domain.right_x - 0.05 * (domain.right_x - domain.left_x)
                   : data.grid_hi_x;
    }
};

namespace detail {

inline ModelConfig parse_model(const ordered_json& j) {
    ModelConfig m;
    Section s(j, "model");
    s.get("preset", m.preset);
    if (s.has("multiscale")) {
        Section ms(j.at("multiscale"), "model.multiscale");
        ms.get("epsilon", m.multiscale.epsilon);
        ms.get("q1", m.multiscale.q1);
        ms.get("q2", m.multiscale.q2);
        ms.get("nu", m.multiscale.nu);
        ms.get("y0_x", m.multiscale.y0);
        ms.get("z0_x", m.multiscale.z0);
        ms.finish();
    }
    s.get("drift_poly", m.drift_poly);
    s.get("diffusion_sq_poly", m.diffusion_sq_poly);
    s.get("ou_theta", m.ou_theta);
    s.get("ou_sigma_sq", m.ou_sigma_sq);
    s.get("brownian_sigma_sq", m.brownian_sigma_sq);
    s.finish();
    const std::set<std::string> known{"single-scale", "multiscale", "ou", "brownian", "custom"};
    if (!known.count(m.preset)) throw config_error("unknown model.preset '" + m.preset + "'");
    return m;
}

inline DomainConfig parse_domain(const ordered_json& j) {
    DomainConfig d;
    Section s(j, "domain");
    s.get("left_x", d.left_x);
    s.get("right_x", d.right_x);
    s.get("n_cells", d.n_cells);
    s.finish();
    if (!(d.left_x < d.right_x)) throw config_error("domain.left_x must be < domain.right_x");
    if (d.n_cells < 1) throw config_error("domain.n_cells must be >= 1");
    return d;
}

inline DataConfig parse_data(const ordered_json& j) {
    DataConfig d;
    Section s(j, "data");
    s.get("kind", d.kind);
    s.get("n_sites", d.n_sites);
    s.get("site_lo_x", d.site_lo_x);
    s.get("site_hi_x", d.site_hi_x);
    s.get("n_traj", d.n_traj);
    s.get("dt_time", d.dt_time);
    s.get("max_steps", d.max_steps);
    s.get("n_moments", d.n_moments);
    s.get("n_steps", d.n_steps);
    s.get("snapshots_time", d.snapshots_time);
    s.get("bandwidth_x", d.bandwidth_x);
    s.get("grid_count", d.grid_count);
    s.get("grid_lo_x", d.grid_lo_x);
    s.get("grid_hi_x", d.grid_hi_x);
    if (s.has("init")) {
        Section in(j.at("init"), "data.init");
        in.get("kind", d.init.kind);
        in.get("mean_x", d.init.mean_x);
        in.get("sd_x", d.init.sd_x);
        in.finish();
        d.init.spec();  // validates kind
    }
    s.get("var_floor", d.var_floor);
    s.finish();
    if (d.kind != "mfpt" && d.kind != "fp")
        throw config_error("data.kind must be 'mfpt' or 'fp'");
    if (d.dt_time <= 0.0) throw config_error("data.dt_time must be positive");
    if (d.kind == "mfpt" && (d.n_sites < 1 || d.n_traj < 2 || d.n_moments < 1))
        throw config_error("data: mfpt needs n_sites >= 1, n_traj >= 2, n_moments >= 1");
    if (d.kind == "fp") {
        if (d.snapshots_time.size() < 2)
            throw config_error("data.snapshots_time needs at least two entries for fp");
        for (std::size_t i = 1; i < d.snapshots_time.size(); ++i)
            if (d.snapshots_time[i] <= d.snapshots_time[i - 1])
                throw config_error("data.snapshots_time must be strictly increasing");
        if (d.bandwidth_x <= 0.0) throw config_error("data.bandwidth_x must be positive");
        if (d.grid_count < 2) throw config_error("data.grid_count must be >= 2");
    }
    return d;
}

inline ComponentPriorConfig parse_component_prior(const ordered_json& j, const char* path) {
    ComponentPriorConfig c;
    Section s(j, path);
    s.get("sigma2", c.sigma2);
    s.get("rho_x", c.rho_x);
    s.get("mean", c.mean);
    s.finish();
    if (c.sigma2 <= 0.0 || c.rho_x <= 0.0)
        throw config_error(std::string(path) + ": sigma2 and rho_x must be positive");
    return c;
}

inline PriorConfig parse_prior(const ordered_json& j) {
    PriorConfig p;
    Section s(j, "prior");
    if (s.has("b")) p.b = parse_component_prior(j.at("b"), "prior.b");
    if (s.has("s")) p.s = parse_component_prior(j.at("s"), "prior.s");
    s.finish();
    return p;
}

inline SolverConfig parse_solver(const ordered_json& j) {
    SolverConfig c;
    Section s(j, "solver");
    s.get("tol_grad_rel", c.tol_grad_rel);
    s.get("max_newton", c.max_newton);
    s.get("cg_max", c.cg_max);
    s.get("full_newton", c.full_newton);
    s.get("fp_n_time_steps", c.fp_n_time_steps);
    s.finish();
    if (c.fp_n_time_steps < 1) throw config_error("solver.fp_n_time_steps must be >= 1");
    return c;
}

inline LaplaceConfig parse_laplace(const ordered_json& j) {
    LaplaceConfig c;
    Section s(j, "laplace");
    s.get("rank", c.rank);
    s.get("oversample", c.oversample);
    s.get("power_iters", c.power_iters);
    s.get("truncate_below", c.truncate_below);
    s.finish();
    return c;
}

inline McmcConfig parse_mcmc(const ordered_json& j) {
    McmcConfig c;
    Section s(j, "mcmc");
    s.get("n_steps", c.n_steps);
    s.get("burn_in", c.burn_in);
    s.get("thin", c.thin);
    s.get("h", c.h);
    s.get("tune", c.tune);
    s.get("tune_steps", c.tune_steps);
    s.get("tune_target", c.tune_target);
    s.finish();
    return c;
}

inline PredictConfig parse_predict(const ordered_json& j) {
    PredictConfig c;
    Section s(j, "predict");
    s.get("n_draws", c.n_draws);
    s.get("source", c.source);
    s.finish();
    if (c.n_draws < 0) throw config_error("predict.n_draws must be >= 0");
    if (c.source != "auto" && c.source != "chain" && c.source != "laplace")
        throw config_error("predict.source must be 'auto', 'chain' or 'laplace'");
    return c;
}

}  // namespace detail

inline PipelineConfig parse_config(const ordered_json& j) {
    PipelineConfig cfg;
    detail::Section s(j, "<root>");
    if (s.has("model")) cfg.model = detail::parse_model(j.at("model"));
    if (s.has("domain")) cfg.domain = detail::parse_domain(j.at("domain"));
    if (s.has("data")) cfg.data = detail::parse_data(j.at("data"));
    if (s.has("prior")) cfg.prior = detail::parse_prior(j.at("prior"));
    if (s.has("solver")) cfg.solver = detail::parse_solver(j.at("solver"));
    if (s.has("laplace")) cfg.laplace = detail::parse_laplace(j.at("laplace"));
    if (s.has("mcmc")) cfg.mcmc = detail::parse_mcmc(j.at("mcmc"));
    if (s.has("predict")) cfg.predict = detail::parse_predict(j.at("predict"));
    s.get("output_dir", cfg.output_dir);
    s.get("seed", cfg.seed);
    s.finish();
    cfg.echo = j;
    return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream probe(path);
    if (!probe) throw config_error("config file not found: " + path);
    ordered_json j = ordered_json::parse(io::read_text(path), nullptr, false);
    if (j.is_discarded()) throw config_error("config file is not valid JSON: " + path);
    return parse_config(j);
}

// Materialize the configured truth model.
inline SdeModel make_model(const ModelConfig& m) {
    if (m.preset == "single-scale") return benchmark_model();
    if (m.preset == "ou") return ou_model(m.ou_theta, m.ou_sigma_sq);
    if (m.preset == "brownian") return brownian_model(m.brownian_sigma_sq);
    if (m.preset == "multiscale") return effective_model(m.multiscale);
    auto poly = [](std::vector<double> c) {
        return [c = std::move(c)](double x) {
            double acc = 0.0;
            for (std::size_t i = c.size(); i-- > 0;) acc = acc * x + c[i];
            return acc;
        };
    };
    SdeModel model;
    model.name = "custom";
    model.drift = poly(m.drift_poly);
    model.diffusion_sq = poly(m.diffusion_sq_poly);
    return model;
}

}  // namespace sdebayes
