#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "sdebayes/bip.hpp"
#include "sdebayes/common.hpp"
#include "sdebayes/laplace.hpp"
#include "sdebayes/prior.hpp"
#include "sdebayes/rng.hpp"

namespace sdebayes {

struct ChainState {
    Eigen::VectorXd m;
    double phi = 0.0;
    Eigen::VectorXd grad_phi;
};

inline ChainState make_chain_state(const MisfitModel& model, const Eigen::VectorXd& m) {
    auto eval = model.evaluate(m, true);
    return ChainState{m, eval->value, eval->gradient};
}

// rho = (4-h)/(4+h); the Langevin step weight a = 2h/(4+h) satisfies rho + a = 1.
inline double mala_rho(double h) {
    if (!(h > 0.0)) throw config_error("mala: step size must be positive");
    return (4.0 - h) / (4.0 + h);
}

// Mean of the Laplace-preconditioned Langevin proposal started at `state`.
inline Eigen::VectorXd proposal_mean(const ChainState& state, const LowRankPosterior& laplace,
                                     const JointPrior& prior, double h) {
    const double a = 2.0 * h / (4.0 + h);
    const Eigen::VectorXd pull =
        prior.apply_precision(state.m - prior.mean()) + state.grad_phi;
    return state.m - a * laplace.apply_covariance(pull);
}

inline Eigen::VectorXd mala_propose(const ChainState& state, const LowRankPosterior& laplace,
                                    const JointPrior& prior, double h, NormalStream& rng) {
    const double rho = mala_rho(h);
    const double noise_scale = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    return proposal_mean(state, laplace, prior, h) +
           noise_scale * laplace.sample_fluctuation(rng);
}

struct AcceptDecision {
    bool accepted = false;
    double log_ratio = 0.0;
};

// Exact finite-dimensional MH ratio for the Gaussian proposal kernel
// N(proposal_mean(m), (1-rho^2) C_LA); the normalization determinants cancel.
inline AcceptDecision mh_accept(const ChainState& current, const ChainState& proposed,
                                double h, const LowRankPosterior& laplace,
                                const JointPrior& prior, NormalStream& rng) {
    const double rho = mala_rho(h);
    AcceptDecision out;
    if (!std::isfinite(proposed.phi)) {
        rng.uniform_pos();  // keep the stream aligned with the accept draw
        out.log_ratio = -std::numeric_limits<double>::infinity();
        return out;
    }
    const Eigen::VectorXd mbar = prior.mean();
    const Eigen::VectorXd mu_cur = proposal_mean(current, laplace, prior, h);
    const Eigen::VectorXd mu_prop = proposal_mean(proposed, laplace, prior, h);
    auto q_la = [&](const Eigen::VectorXd& v) { return v.dot(laplace.apply_precision(v)); };

    double log_ratio = current.phi - proposed.phi;
    log_ratio += prior.quad(current.m - mbar) - prior.quad(proposed.m - mbar);
    log_ratio +=
        (q_la(proposed.m - mu_cur) - q_la(current.m - mu_prop)) / (2.0 * (1.0 - rho * rho));

    out.log_ratio = log_ratio;
    out.accepted = std::log(rng.uniform_pos()) <= log_ratio;
    return out;
}

struct ChainOptions {
    int n_steps = 1000;
    int burn_in = 0;
    int thin = 1;
    double h = 0.5;
    std::uint64_t seed = 0;
};

struct ChainResult {
    Eigen::MatrixXd samples;  // one retained state per column
    Eigen::VectorXd phi_trace;
    double acceptance_rate = 0.0;
    int n_accepted = 0;
    double h = 0.0;
    std::uint64_t seed = 0;
};

inline ChainResult run_chain(const MisfitModel& model, const JointPrior& prior,
                             const LowRankPosterior& laplace, const ParameterField& m0,
                             const ChainOptions& opts) {
    if (opts.n_steps <= opts.burn_in || opts.burn_in < 0)
        throw config_error("run_chain: need n_steps > burn_in >= 0");
    if (opts.thin < 1) throw config_error("run_chain: thin must be >= 1");
    if (model.n() != prior.n() || prior.n() != laplace.prior().n() ||
        m0.stacked().size() != model.n())
        throw config_error("run_chain: dimension mismatch across model, prior, laplace, m0");
    mala_rho(opts.h);

    NormalStream rng(opts.seed);
    ChainState state = make_chain_state(model, m0.stacked());
    if (!std::isfinite(state.phi)) throw numerical_error("run_chain: misfit at m0 not finite");

    const int n_post = opts.n_steps - opts.burn_in;
    const int n_kept = (n_post + opts.thin - 1) / opts.thin;
    ChainResult result;
    result.samples.resize(model.n(), n_kept);
    result.phi_trace.resize(opts.n_steps);
    result.h = opts.h;
    result.seed = opts.seed;

    int kept = 0;
    for (int step = 1; step <= opts.n_steps; ++step) {
        const Eigen::VectorXd cand = mala_propose(state, laplace, prior, opts.h, rng);
        bool have_state = true;
        ChainState proposed;
        try {
            proposed = make_chain_state(model, cand);
        } catch (const numerical_error&) {
            have_state = false;
        }
        if (have_state) {
            const auto decision = mh_accept(state, proposed, opts.h, laplace, prior, rng);
            if (decision.accepted) {
                state = std::move(proposed);
                ++result.n_accepted;
            }
        } else {
            rng.uniform_pos();  // align the stream with the skipped accept draw
        }
        result.phi_trace[step - 1] = state.phi;
        if (step > opts.burn_in && (step - opts.burn_in - 1) % opts.thin == 0)
            result.samples.col(kept++) = state.m;
    }
    result.acceptance_rate = static_cast<double>(result.n_accepted) / opts.n_steps;
    return result;
}

struct TuneResult {
    double h = 0.0;
    double acceptance = 0.0;
};

// Dual-averaging step-size search (Hoffman-Gelman scheme) targeting a given
// mean acceptance; returns the averaged step size and the acceptance observed
// while tuning.
inline TuneResult tune_step_size(const MisfitModel& model, const JointPrior& prior,
                                 const LowRankPosterior& laplace, const ParameterField& m0,
                                 double h0, int n_tune, double target = 0.6,
                                 std::uint64_t seed = 0) {
    if (!(h0 > 0.0) || n_tune < 1) throw config_error("tune_step_size: bad h0 or n_tune");
    if (!(target > 0.0 && target < 1.0))
        throw config_error("tune_step_size: target acceptance must lie in (0,1)");

    const double gamma = 0.05, t0 = 10.0, kappa = 0.75;
    const double mu = std::log(10.0 * h0);
    double log_h = std::log(h0), log_h_avg = std::log(h0), h_bar = 0.0;

    NormalStream rng(seed);
    ChainState state = make_chain_state(model, m0.stacked());
    double accepted = 0.0;
    for (int t = 1; t <= n_tune; ++t) {
        const double h = std::clamp(std::exp(log_h), 1e-8, 1e4);
        const Eigen::VectorXd cand = mala_propose(state, laplace, prior, h, rng);
        double alpha = 0.0;
        try {
            ChainState proposed = make_chain_state(model, cand);
            const auto decision = mh_accept(state, proposed, h, laplace, prior, rng);
            alpha = std::min(1.0, std::exp(decision.log_ratio));
            if (decision.accepted) {
                state = std::move(proposed);
                accepted += 1.0;
            }
        } catch (const numerical_error&) {
            rng.uniform_pos();
        }
        h_bar = (1.0 - 1.0 / (t + t0)) * h_bar + (target - alpha) / (t + t0);
        log_h = mu - std::sqrt(static_cast<double>(t)) / gamma * h_bar;
        const double w = std::pow(static_cast<double>(t), -kappa);
        log_h_avg = w * log_h + (1.0 - w) * log_h_avg;
    }
    return TuneResult{std::clamp(std::exp(log_h_avg), 1e-8, 1e4), accepted / n_tune};
}

}  // namespace sdebayes
