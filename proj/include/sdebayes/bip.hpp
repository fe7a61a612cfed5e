#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <memory>
#include <vector>

#include "sdebayes/assembly.hpp"
#include "sdebayes/common.hpp"
#include "sdebayes/data_prep.hpp"
#include "sdebayes/fem.hpp"
#include "sdebayes/field.hpp"
#include "sdebayes/mesh.hpp"

namespace sdebayes {

// Cached state of one misfit evaluation. Concrete models attach their
// forward/adjoint solutions and factorizations for Hessian applications.
struct MisfitEval {
    double value = 0.0;
    Eigen::VectorXd gradient;  // coefficient space, stacked [g_b; g_s]; empty without adjoints
    virtual ~MisfitEval() = default;

    bool has_gradient() const { return gradient.size() > 0; }
};

// Negative log-likelihood Phi(m) = 1/2 ||y - F(m)||^2_Gamma with adjoint
// derivatives. m is the stacked coefficient vector [b; s].
class MisfitModel {
public:
    virtual ~MisfitModel() = default;
    virtual int n() const = 0;
    virtual Eigen::VectorXd predict(const Eigen::VectorXd& m) const = 0;
    virtual std::unique_ptr<MisfitEval> evaluate(const Eigen::VectorXd& m,
                                                 bool with_gradient) const = 0;
    // (Gauss-Newton) data-misfit Hessian application at the point `eval` was
    // computed for; requires an eval carrying gradient state.
    virtual Eigen::VectorXd hessian_vector(const MisfitEval& eval,
                                           const Eigen::VectorXd& v) const = 0;
};

namespace detail {

inline void require_cache(const MisfitEval& eval, const char* who) {
    if (!eval.has_gradient())
        throw config_error(std::string(who) +
                           ": hessian_vector needs an evaluation with gradient state");
}

inline SpMat transposed(const SpMat& a) {
    SpMat at = a.transpose();
    at.makeCompressed();
    return at;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MFPT-moment forward model
// ---------------------------------------------------------------------------

struct MfptEval : MisfitEval {
    ParameterField field;
    Eigen::VectorXd sigma_sq;
    Eigen::MatrixXd tau;  // n_nodes x k, zero boundary rows
    Eigen::MatrixXd adj;  // n_nodes x k, padded adjoint states (only with gradient)
    std::shared_ptr<SparseSolver> lu, lu_t;
};

class MfptMisfit : public MisfitModel {
public:
    MfptMisfit(const Mesh1d& mesh, const ObservationSet& obs, bool full_newton = false)
        : mesh_(mesh), obs_(obs), full_newton_(full_newton) {
        if (obs.kind != "mfpt") throw config_error("MfptMisfit: observation set kind mismatch");
        if (obs.n_moments < 1) throw config_error("MfptMisfit: need at least one moment");
        if ((obs.gamma_diag.array() <= 0.0).any())
            throw data_error("MfptMisfit: noise covariance must be positive");
        if (obs.y.size() != obs.n_moments * obs.locations.size())
            throw config_error("MfptMisfit: stacked data length mismatch");
        mass_ = assemble_mass(mesh);
        bmat_ = observation_matrix(mesh, obs.locations);
        bmat_t_ = detail::transposed(bmat_);
        gamma_inv_ = obs.gamma_diag.cwiseInverse();
    }

    int n() const override { return 2 * mesh_.n_nodes(); }
    const Mesh1d& mesh() const { return mesh_; }
    const ObservationSet& observations() const { return obs_; }

    Eigen::VectorXd predict(const Eigen::VectorXd& m) const override {
        auto field = ParameterField::from_stacked(mesh_, m);
        auto sol = solve_mfpt_hierarchy(mesh_, field, obs_.n_moments);
        return observe(sol, obs_.locations);
    }

    std::unique_ptr<MisfitEval> evaluate(const Eigen::VectorXd& m,
                                         bool with_gradient) const override {
        auto eval = std::make_unique<MfptEval>();
        eval->field = ParameterField::from_stacked(mesh_, m);
        eval->sigma_sq = checked_sigma_sq(eval->field);
        const int nn = mesh_.n_nodes();
        const int k = obs_.n_moments;
        const int q = obs_.q();

        const SpMat a_raw = assemble_generator(mesh_, eval->field.b, eval->sigma_sq);
        const SpMat a_int = interior_block(a_raw);
        eval->lu = std::make_shared<SparseSolver>();
        factorize(*eval->lu, a_int, "MfptMisfit forward");

        // forward hierarchy
        eval->tau.setZero(nn, k);
        Eigen::VectorXd prev = Eigen::VectorXd::Ones(nn);
        for (int mo = 1; mo <= k; ++mo) {
            Eigen::VectorXd rhs = -mo * interior(mass_ * prev);
            prev = pad_interior(eval->lu->solve(rhs), nn);
            eval->tau.col(mo - 1) = prev;
        }

        // misfit and residual weights w_n = Gamma_n^{-1}(B tau_n - y_n)
        Eigen::MatrixXd wres(q, k);
        eval->value = 0.0;
        for (int mo = 0; mo < k; ++mo) {
            const Eigen::VectorXd r =
                bmat_ * eval->tau.col(mo) - obs_.y.segment(mo * q, q);
            const auto gi = gamma_inv_.segment(mo * q, q);
            eval->value += 0.5 * r.dot(gi.cwiseProduct(r));
            wres.col(mo) = gi.cwiseProduct(r);
        }
        if (!with_gradient) return eval;

        eval->lu_t = std::make_shared<SparseSolver>();
        factorize(*eval->lu_t, detail::transposed(a_int), "MfptMisfit adjoint");

        // adjoint hierarchy in reverse moment order
        eval->adj.setZero(nn, k);
        Eigen::VectorXd next = Eigen::VectorXd::Zero(nn);
        for (int mo = k; mo >= 1; --mo) {
            Eigen::VectorXd rhs = -interior(bmat_t_ * wres.col(mo - 1));
            if (mo < k) rhs -= (mo + 1) * interior(mass_ * next);
            next = pad_interior(eval->lu_t->solve(rhs), nn);
            eval->adj.col(mo - 1) = next;
        }

        // control equation: accumulate over moments
        Eigen::VectorXd gb = Eigen::VectorXd::Zero(nn), gw = Eigen::VectorXd::Zero(nn);
        for (int mo = 0; mo < k; ++mo) {
            auto [cb, cw] = control_assembly(mesh_, eval->tau.col(mo), eval->adj.col(mo));
            gb += cb;
            gw += cw;
        }
        eval->gradient.resize(2 * nn);
        eval->gradient.head(nn) = gb;
        eval->gradient.tail(nn) = eval->sigma_sq.cwiseProduct(gw);
        return eval;
    }

    Eigen::VectorXd hessian_vector(const MisfitEval& eval_base,
                                   const Eigen::VectorXd& v) const override {
        detail::require_cache(eval_base, "MfptMisfit");
        const auto* evp = dynamic_cast<const MfptEval*>(&eval_base);
        if (!evp) throw config_error("MfptMisfit: evaluation cache from a different model");
        const auto& ev = *evp;
        const int nn = mesh_.n_nodes();
        const int k = obs_.n_moments;
        const int q = obs_.q();
        const Eigen::VectorXd vb = v.head(nn);
        const Eigen::VectorXd dw = ev.sigma_sq.cwiseProduct(v.tail(nn));  // d(e^s) = e^s ds
        const SpMat da = assemble_generator(mesh_, vb, dw);
        const SpMat da_t = detail::transposed(da);

        // incremental forward
        Eigen::MatrixXd dtau(nn, k);
        Eigen::VectorXd prev = Eigen::VectorXd::Zero(nn);
        for (int mo = 1; mo <= k; ++mo) {
            Eigen::VectorXd rhs = -interior(da * ev.tau.col(mo - 1));
            if (mo > 1) rhs -= mo * interior(mass_ * prev);
            prev = pad_interior(ev.lu->solve(rhs), nn);
            dtau.col(mo - 1) = prev;
        }

        // incremental adjoint
        Eigen::MatrixXd dadj(nn, k);
        Eigen::VectorXd next = Eigen::VectorXd::Zero(nn);
        for (int mo = k; mo >= 1; --mo) {
            const auto gi = gamma_inv_.segment((mo - 1) * q, q);
            const Eigen::VectorXd z = gi.cwiseProduct(bmat_ * dtau.col(mo - 1));
            Eigen::VectorXd rhs = -interior(bmat_t_ * z);
            if (mo < k) rhs -= (mo + 1) * interior(mass_ * next);
            if (full_newton_) rhs -= interior(da_t * ev.adj.col(mo - 1));
            next = pad_interior(ev.lu_t->solve(rhs), nn);
            dadj.col(mo - 1) = next;
        }

        Eigen::VectorXd hb = Eigen::VectorXd::Zero(nn), hw = Eigen::VectorXd::Zero(nn);
        for (int mo = 0; mo < k; ++mo) {
            auto [cb, cw] = control_assembly(mesh_, ev.tau.col(mo), dadj.col(mo));
            hb += cb;
            hw += cw;
            if (full_newton_) {
                auto [cb2, cw2] = control_assembly(mesh_, dtau.col(mo), ev.adj.col(mo));
                hb += cb2;
                hw += cw2;
            }
        }
        Eigen::VectorXd hv(2 * nn);
        hv.head(nn) = hb;
        hv.tail(nn) = ev.sigma_sq.cwiseProduct(hw);
        if (full_newton_) {
            // second derivative of e^s: diagonal term on the s block
            Eigen::VectorXd gw_base = Eigen::VectorXd::Zero(nn);
            for (int mo = 0; mo < k; ++mo) {
                auto [cb, cw] = control_assembly(mesh_, ev.tau.col(mo), ev.adj.col(mo));
                gw_base += cw;
            }
            hv.tail(nn) +=
                v.tail(nn).cwiseProduct(ev.sigma_sq.cwiseProduct(gw_base));
        }
        return hv;
    }

private:
    Mesh1d mesh_;
    ObservationSet obs_;
    bool full_newton_;
    SpMat mass_, bmat_, bmat_t_;
    Eigen::VectorXd gamma_inv_;
};

// ---------------------------------------------------------------------------
// Fokker-Planck forward model (Crank-Nicolson in time, discrete adjoint)
// ---------------------------------------------------------------------------

struct FpEval : MisfitEval {
    ParameterField field;
    Eigen::VectorXd sigma_sq;
    Eigen::MatrixXd p;    // n_int x (T+1) interior states
    Eigen::MatrixXd lam;  // n_int x (T+1); column j holds lambda_j (j >= 1)
    SpMat c_plus, c_plus_t;
    std::shared_ptr<SparseSolver> lu_minus, lu_minus_t;
};

class FpMisfit : public MisfitModel {
public:
    FpMisfit(const Mesh1d& mesh, const ObservationSet& obs, FeFunction p0, double t_end,
             int n_time_steps, bool full_newton = false)
        : mesh_(mesh), obs_(obs), p0_(std::move(p0)), t_end_(t_end),
          n_steps_(n_time_steps), full_newton_(full_newton) {
        if (obs.kind != "fp") throw config_error("FpMisfit: observation set kind mismatch");
        if ((obs.gamma_diag.array() <= 0.0).any())
            throw data_error("FpMisfit: noise covariance must be positive");
        if (n_steps_ < 1 || t_end_ <= 0.0)
            throw config_error("FpMisfit: require n_time_steps >= 1 and t_end > 0");
        if (p0_.values.size() != mesh.n_nodes()) throw config_error("FpMisfit: p0 size mismatch");
        if (obs.y.size() != static_cast<long>(obs.times.size()) * obs.locations.size())
            throw config_error("FpMisfit: stacked data length mismatch");
        dt_ = t_end_ / n_steps_;
        mass_int_ = interior_block(assemble_mass(mesh));
        bmat_ = observation_matrix(mesh, obs.locations);
        bmat_t_ = detail::transposed(bmat_);
        gamma_inv_ = obs.gamma_diag.cwiseInverse();
        obs_steps_.reserve(obs.times.size());
        for (double t : obs.times) {
            const double r = t / dt_;
            const long j = std::llround(r);
            if (std::abs(r - j) > 1e-8 * std::max(1.0, std::abs(r)) || j < 0 || j > n_steps_)
                throw config_error("FpMisfit: observation time " + std::to_string(t) +
                                   " is not on the solver time grid");
            obs_steps_.push_back(static_cast<int>(j));
        }
    }

    int n() const override { return 2 * mesh_.n_nodes(); }
    const Mesh1d& mesh() const { return mesh_; }
    const ObservationSet& observations() const { return obs_; }
    double dt() const { return dt_; }

    Eigen::VectorXd predict(const Eigen::VectorXd& m) const override {
        auto field = ParameterField::from_stacked(mesh_, m);
        auto sol = solve_fokker_planck(mesh_, field, p0_, t_end_, n_steps_);
        return observe(sol, obs_.locations, obs_.times);
    }

    std::unique_ptr<MisfitEval> evaluate(const Eigen::VectorXd& m,
                                         bool with_gradient) const override {
        auto eval = std::make_unique<FpEval>();
        eval->field = ParameterField::from_stacked(mesh_, m);
        eval->sigma_sq = checked_sigma_sq(eval->field);
        const int nn = mesh_.n_nodes();
        const int ni = nn - 2;
        const int q = obs_.q();

        const SpMat a_raw = assemble_generator(mesh_, eval->field.b, eval->sigma_sq);
        const SpMat a_star = detail::transposed(interior_block(a_raw));  // forward operator
        SpMat c_minus = mass_int_ - (dt_ / 2.0) * a_star;
        eval->c_plus = mass_int_ + (dt_ / 2.0) * a_star;
        eval->lu_minus = std::make_shared<SparseSolver>();
        factorize(*eval->lu_minus, c_minus, "FpMisfit forward");

        // forward sweep
        eval->p.resize(ni, n_steps_ + 1);
        eval->p.col(0) = interior(p0_.values);
        for (int j = 1; j <= n_steps_; ++j) {
            const Eigen::VectorXd rhs = eval->c_plus * eval->p.col(j - 1);
            eval->p.col(j) = eval->lu_minus->solve(rhs);
        }

        // misfit; residual weights per observed step
        eval->value = 0.0;
        std::vector<Eigen::VectorXd> wres(obs_steps_.size());
        for (std::size_t i = 0; i < obs_steps_.size(); ++i) {
            const Eigen::VectorXd pred =
                bmat_ * pad_interior(eval->p.col(obs_steps_[i]), nn);
            const Eigen::VectorXd r = pred - obs_.y.segment(i * q, q);
            const auto gi = gamma_inv_.segment(i * q, q);
            eval->value += 0.5 * r.dot(gi.cwiseProduct(r));
            wres[i] = gi.cwiseProduct(r);
        }
        if (!with_gradient) return eval;

        eval->c_plus_t = detail::transposed(eval->c_plus);
        eval->lu_minus_t = std::make_shared<SparseSolver>();
        factorize(*eval->lu_minus_t, detail::transposed(c_minus), "FpMisfit adjoint");

        // backward sweep: lambda_j for j = T..1
        eval->lam.setZero(ni, n_steps_ + 1);
        Eigen::VectorXd carry = Eigen::VectorXd::Zero(ni);  // C+^T lambda_{j+1}
        for (int j = n_steps_; j >= 1; --j) {
            Eigen::VectorXd rhs = carry;
            if (const int oi = observed_index(j); oi >= 0)
                rhs -= interior(bmat_t_ * wres[oi]);
            eval->lam.col(j) = eval->lu_minus_t->solve(rhs);
            carry = eval->c_plus_t * eval->lam.col(j);
        }

        // control equation: g_theta = -(dt/2) sum_j c_theta(lambda_{j+1}, p^{j+1} + p^j)
        Eigen::VectorXd gb = Eigen::VectorXd::Zero(nn), gw = Eigen::VectorXd::Zero(nn);
        for (int j = 0; j < n_steps_; ++j) {
            const Eigen::VectorXd lam_full = pad_interior(eval->lam.col(j + 1), nn);
            const Eigen::VectorXd psum =
                pad_interior((eval->p.col(j + 1) + eval->p.col(j)).eval(), nn);
            auto [cb, cw] = control_assembly(mesh_, lam_full, psum);
            gb -= (dt_ / 2.0) * cb;
            gw -= (dt_ / 2.0) * cw;
        }
        eval->gradient.resize(2 * nn);
        eval->gradient.head(nn) = gb;
        eval->gradient.tail(nn) = eval->sigma_sq.cwiseProduct(gw);
        return eval;
    }

    Eigen::VectorXd hessian_vector(const MisfitEval& eval_base,
                                   const Eigen::VectorXd& v) const override {
        detail::require_cache(eval_base, "FpMisfit");
        const auto* evp = dynamic_cast<const FpEval*>(&eval_base);
        if (!evp) throw config_error("FpMisfit: evaluation cache from a different model");
        const auto& ev = *evp;
        const int nn = mesh_.n_nodes();
        const int ni = nn - 2;
        const int q = obs_.q();
        const Eigen::VectorXd vb = v.head(nn);
        const Eigen::VectorXd dw = ev.sigma_sq.cwiseProduct(v.tail(nn));
        const SpMat da = assemble_generator(mesh_, vb, dw);
        const SpMat da_t = detail::transposed(da);

        // incremental forward: C- dp^{j+1} = C+ dp^j + (dt/2) dA^T (p^{j+1} + p^j)
        Eigen::MatrixXd dp(ni, n_steps_ + 1);
        dp.col(0).setZero();
        for (int j = 0; j < n_steps_; ++j) {
            const Eigen::VectorXd psum =
                pad_interior((ev.p.col(j + 1) + ev.p.col(j)).eval(), nn);
            Eigen::VectorXd rhs =
                ev.c_plus * dp.col(j) + (dt_ / 2.0) * interior(da_t * psum);
            dp.col(j + 1) = ev.lu_minus->solve(rhs);
        }

        // incremental adjoint
        Eigen::MatrixXd dlam(ni, n_steps_ + 1);
        dlam.setZero();
        Eigen::VectorXd carry = Eigen::VectorXd::Zero(ni);
        for (int j = n_steps_; j >= 1; --j) {
            Eigen::VectorXd rhs = carry;
            if (const int oi = observed_index(j); oi >= 0) {
                const auto gi = gamma_inv_.segment(oi * q, q);
                const Eigen::VectorXd z =
                    gi.cwiseProduct(bmat_ * pad_interior(dp.col(j), nn));
                rhs -= interior(bmat_t_ * z);
            }
            if (full_newton_) {
                Eigen::VectorXd lsum = ev.lam.col(j);
                if (j < n_steps_) lsum += ev.lam.col(j + 1);
                rhs += (dt_ / 2.0) * interior(da * pad_interior(lsum, nn));
            }
            dlam.col(j) = ev.lu_minus_t->solve(rhs);
            carry = ev.c_plus_t * dlam.col(j);
        }

        Eigen::VectorXd hb = Eigen::VectorXd::Zero(nn), hw = Eigen::VectorXd::Zero(nn);
        Eigen::VectorXd gw_base = Eigen::VectorXd::Zero(nn);
        for (int j = 0; j < n_steps_; ++j) {
            const Eigen::VectorXd psum =
                pad_interior((ev.p.col(j + 1) + ev.p.col(j)).eval(), nn);
            auto [cb, cw] =
                control_assembly(mesh_, pad_interior(dlam.col(j + 1), nn), psum);
            hb -= (dt_ / 2.0) * cb;
            hw -= (dt_ / 2.0) * cw;
            if (full_newton_) {
                const Eigen::VectorXd dpsum =
                    pad_interior((dp.col(j + 1) + dp.col(j)).eval(), nn);
                auto [cb2, cw2] = control_assembly(
                    mesh_, pad_interior(ev.lam.col(j + 1), nn), dpsum);
                hb -= (dt_ / 2.0) * cb2;
                hw -= (dt_ / 2.0) * cw2;
                auto [cb3, cw3] = control_assembly(
                    mesh_, pad_interior(ev.lam.col(j + 1), nn), psum);
                gw_base -= (dt_ / 2.0) * cw3;
            }
        }
        Eigen::VectorXd hv(2 * nn);
        hv.head(nn) = hb;
        hv.tail(nn) = ev.sigma_sq.cwiseProduct(hw);
        if (full_newton_)
            hv.tail(nn) += v.tail(nn).cwiseProduct(ev.sigma_sq.cwiseProduct(gw_base));
        return hv;
    }

private:
    int observed_index(int step) const {
        for (std::size_t i = 0; i < obs_steps_.size(); ++i)
            if (obs_steps_[i] == step) return static_cast<int>(i);
        return -1;
    }

    Mesh1d mesh_;
    ObservationSet obs_;
    FeFunction p0_;
    double t_end_;
    int n_steps_;
    bool full_newton_;
    double dt_ = 0.0;
    SpMat mass_int_, bmat_, bmat_t_;
    Eigen::VectorXd gamma_inv_;
    std::vector<int> obs_steps_;
};

}  // namespace sdebayes
