#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "sdebayes/bip.hpp"
#include "sdebayes/common.hpp"
#include "sdebayes/field.hpp"
#include "sdebayes/prior.hpp"

namespace sdebayes {

struct MapProblem {
    MapProblem(const MisfitModel& model, const JointPrior& prior, ParameterField m0)
        : model(&model), prior(&prior), m0(std::move(m0)) {
        if (model.n() != prior.n() ||
            model.n() != static_cast<int>(this->m0.stacked().size()))
            throw config_error("MapProblem: model, prior and initial point sizes differ");
    }

    const MisfitModel* model;
    const JointPrior* prior;
    ParameterField m0;
};

struct NewtonRecord {
    int iter = 0;
    double cost = 0.0;
    double grad_norm = 0.0;  // C-weighted dual norm
    int cg_iters = 0;
    double step = 0.0;
};

struct MapOptions {
    double tol_grad_rel = 1e-6;
    int max_newton = 30;
    int cg_max = 200;
    bool precondition = true;
    std::function<void(const NewtonRecord&)> on_iteration;
};

struct MapResult {
    ParameterField m_map;
    std::vector<double> cost_history;
    std::vector<double> grad_norm_history;
    std::vector<NewtonRecord> iterations;
    int newton_iters = 0;
    int total_cg_iters = 0;
    bool converged = false;
};

namespace detail {

struct CgOutcome {
    Eigen::VectorXd x;
    int iters = 0;
    bool hit_negative_curvature = false;
};

// Preconditioned CG on H x = b, Euclidean residual stop ||r|| <= tol_abs.
// On negative curvature returns the current iterate (Steihaug exit), or the
// preconditioned steepest-descent direction if it appears immediately.
template <class ApplyH, class ApplyPrec>
CgOutcome pcg(ApplyH&& apply_h, ApplyPrec&& apply_prec, const Eigen::VectorXd& b,
              double tol_abs, int max_iter) {
    CgOutcome out;
    out.x = Eigen::VectorXd::Zero(b.size());
    Eigen::VectorXd r = b;
    Eigen::VectorXd z = apply_prec(r);
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    for (int i = 0; i < max_iter; ++i) {
        if (r.norm() <= tol_abs) break;
        const Eigen::VectorXd hp = apply_h(p);
        const double php = p.dot(hp);
        if (php <= 0.0) {
            out.hit_negative_curvature = true;
            if (i == 0) out.x = z;
            break;
        }
        const double alpha = rz / php;
        out.x += alpha * p;
        r -= alpha * hp;
        z = apply_prec(r);
        const double rz_next = r.dot(z);
        p = z + (rz_next / rz) * p;
        rz = rz_next;
        ++out.iters;
    }
    return out;
}

}  // namespace detail

inline MapResult map_estimate(const MapProblem& problem, const MapOptions& opts = {}) {
    if (!(opts.tol_grad_rel > 0.0 && opts.tol_grad_rel < 1.0))
        throw config_error("map_estimate: tol_grad_rel must lie in (0,1)");
    if (opts.max_newton < 0 || opts.cg_max < 1)
        throw config_error("map_estimate: iteration limits out of range");
    const auto& model = *problem.model;
    const auto& prior = *problem.prior;
    const Eigen::VectorXd mbar = prior.mean();

    Eigen::VectorXd m = problem.m0.stacked();
    auto eval = model.evaluate(m, true);
    Eigen::VectorXd g = eval->gradient + prior.apply_precision(m - mbar);
    double cost = eval->value + prior.quad(m - mbar);
    double gd = std::sqrt(std::max(0.0, prior.covariance_inner(g, g)));
    const double gd0 = gd;

    MapResult result;
    result.m_map = problem.m0;
    result.cost_history.push_back(cost);
    result.grad_norm_history.push_back(gd);
    result.converged = gd <= opts.tol_grad_rel * gd0 || gd0 == 0.0;

    auto apply_h = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        return model.hessian_vector(*eval, v) + prior.apply_precision(v);
    };
    auto apply_prec = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        return opts.precondition ? prior.apply_covariance(v) : v;
    };

    for (int k = 0; k < opts.max_newton && !result.converged; ++k) {
        const double eta = std::min(0.5, std::sqrt(gd / gd0));
        auto cg = detail::pcg(apply_h, apply_prec, (-g).eval(), eta * g.norm(), opts.cg_max);
        result.total_cg_iters += cg.iters;

        Eigen::VectorXd d = cg.x;
        double slope = g.dot(d);
        if (!(slope < 0.0)) {  // safeguard: fall back to preconditioned steepest descent
            d = -prior.apply_covariance(g);
            slope = g.dot(d);
        }

        double alpha = 1.0;
        bool accepted = false;
        while (alpha >= 1e-10) {
            const Eigen::VectorXd trial = m + alpha * d;
            double trial_cost;
            try {
                trial_cost = model.evaluate(trial, false)->value + prior.quad(trial - mbar);
            } catch (const numerical_error&) {
                alpha *= 0.5;
                continue;
            }
            if (trial_cost <= cost + 1e-4 * alpha * slope) {
                m = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;  // line-search floor: report best iterate, not converged

        eval = model.evaluate(m, true);
        g = eval->gradient + prior.apply_precision(m - mbar);
        cost = eval->value + prior.quad(m - mbar);
        gd = std::sqrt(std::max(0.0, prior.covariance_inner(g, g)));
        ++result.newton_iters;

        NewtonRecord rec{result.newton_iters, cost, gd, cg.iters, alpha};
        result.iterations.push_back(rec);
        result.cost_history.push_back(cost);
        result.grad_norm_history.push_back(gd);
        if (opts.on_iteration) opts.on_iteration(rec);
        result.converged = gd <= opts.tol_grad_rel * gd0;
    }

    result.m_map = ParameterField::from_stacked(problem.m0.mesh, m);
    return result;
}

}  // namespace sdebayes
