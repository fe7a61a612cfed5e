#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <memory>

#include "sdebayes/assembly.hpp"
#include "sdebayes/common.hpp"
#include "sdebayes/field.hpp"
#include "sdebayes/mesh.hpp"
#include "sdebayes/rng.hpp"

namespace sdebayes {

struct PriorStats {
    double sigma2 = 0.0;
    double rho = 0.0;
    double nu = 0.0;
};

inline double matern_nu(int d) {
    if (d < 1 || d > 3) throw config_error("pointwise_stats: dimension must be 1, 2 or 3");
    return 2.0 - 0.5 * d;
}

// Pointwise marginal statistics of the bi-Laplacian field in d dimensions.
inline PriorStats pointwise_stats(double delta, double gamma, int d) {
    if (delta <= 0.0 || gamma <= 0.0)
        throw config_error("pointwise_stats: hyperparameters must be positive");
    const double nu = matern_nu(d);
    PriorStats s;
    s.nu = nu;
    s.sigma2 = std::tgamma(nu) /
               (std::pow(4.0 * M_PI, 0.5 * d) * std::pow(delta, nu) * std::pow(gamma, 0.5 * d));
    s.rho = std::sqrt(8.0 * nu * gamma / delta);
    return s;
}

// Invert the statistics map: find (delta, gamma) reproducing a target
// pointwise variance and correlation length.
inline std::pair<double, double> solve_hyperparams(double sigma2, double rho, int d) {
    if (sigma2 <= 0.0 || rho <= 0.0)
        throw config_error("solve_hyperparams: targets must be positive");
    const double nu = matern_nu(d);
    // sigma2 = Gamma(nu) (8 nu)^{d/2} / ((4 pi)^{d/2} rho^d delta^{nu + d/2}), nu + d/2 = 2
    const double delta =
        std::sqrt(std::tgamma(nu) * std::pow(8.0 * nu, 0.5 * d) /
                  (std::pow(4.0 * M_PI, 0.5 * d) * std::pow(rho, d) * sigma2));
    const double gamma = rho * rho * delta / (8.0 * nu);
    return {delta, gamma};
}

inline constexpr double kRobinDenom = 1.42;

// Gaussian field with squared-inverse-elliptic covariance: the square-root
// precision A = delta M + gamma K + (sqrt(gamma delta)/1.42) B_boundary gives
// C = A^{-1} M A^{-1}, C^{-1} = A M^{-1} A. Robin terms damp the boundary
// variance inflation.
class MaternPrior {
public:
    MaternPrior(const Mesh1d& mesh, const Eigen::VectorXd& delta, const Eigen::VectorXd& gamma,
                Eigen::VectorXd mean)
        : mesh_(mesh), mean_(std::move(mean)) {
        const int n = mesh.n_nodes();
        if (delta.size() != n || gamma.size() != n || mean_.size() != n)
            throw config_error("MaternPrior: nodal size mismatch");
        if ((delta.array() <= 0.0).any() || (gamma.array() <= 0.0).any())
            throw config_error("MaternPrior: hyperparameters must be positive everywhere");
        mass_ = assemble_mass(mesh);
        a_ = assemble_weighted_mass(mesh, delta) + assemble_weighted_stiffness(mesh, gamma);
        // Robin boundary contribution, coefficient evaluated at the end nodes
        a_.coeffRef(0, 0) += std::sqrt(gamma[0] * delta[0]) / kRobinDenom;
        a_.coeffRef(n - 1, n - 1) += std::sqrt(gamma[n - 1] * delta[n - 1]) / kRobinDenom;
        a_.makeCompressed();

        a_llt_ = std::make_shared<Eigen::SimplicialLLT<SpMat>>();
        a_llt_->compute(a_);
        if (a_llt_->info() != Eigen::Success)
            throw numerical_error("MaternPrior: sqrt-precision operator is not s.p.d.");
        m_llt_ = std::make_shared<Eigen::SimplicialLLT<SpMat>>();
        m_llt_->compute(mass_);
        if (m_llt_->info() != Eigen::Success)
            throw numerical_error("MaternPrior: mass matrix factorization failed");
    }

    MaternPrior(const Mesh1d& mesh, double delta, double gamma, Eigen::VectorXd mean)
        : MaternPrior(mesh, Eigen::VectorXd::Constant(mesh.n_nodes(), delta),
                      Eigen::VectorXd::Constant(mesh.n_nodes(), gamma), std::move(mean)) {}

    static MaternPrior from_stats(const Mesh1d& mesh, double sigma2, double rho,
                                  Eigen::VectorXd mean) {
        auto [delta, gamma] = solve_hyperparams(sigma2, rho, 1);
        return MaternPrior(mesh, delta, gamma, std::move(mean));
    }

    const Mesh1d& mesh() const { return mesh_; }
    const Eigen::VectorXd& mean() const { return mean_; }
    const SpMat& sqrt_precision() const { return a_; }
    const SpMat& mass() const { return mass_; }

    // C^{-1} v = A M^{-1} A v
    Eigen::VectorXd apply_precision(const Eigen::VectorXd& v) const {
        return a_ * m_llt_->solve(a_ * v);
    }

    // C v = A^{-1} M A^{-1} v
    Eigen::VectorXd apply_covariance(const Eigen::VectorXd& v) const {
        return a_llt_->solve(mass_ * a_llt_->solve(v));
    }

    // mean + A^{-1} G xi with G G^T = M via the sparse Cholesky of the mass,
    // so the draw has covariance A^{-1} M A^{-1} exactly
    Eigen::VectorXd sample_from_noise(const Eigen::VectorXd& xi) const {
        if (xi.size() != mean_.size()) throw config_error("MaternPrior: noise size mismatch");
        const Eigen::VectorXd g =
            m_llt_->permutationPinv() * (m_llt_->matrixL() * xi).eval();
        return mean_ + a_llt_->solve(g);
    }

    Eigen::VectorXd sample(NormalStream& rng) const {
        Eigen::VectorXd xi(mean_.size());
        for (int i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
        return sample_from_noise(xi);
    }

private:
    Mesh1d mesh_;
    Eigen::VectorXd mean_;
    SpMat a_, mass_;
    std::shared_ptr<Eigen::SimplicialLLT<SpMat>> a_llt_, m_llt_;
};

// Independent product measure over the stacked parameter [b; s].
class JointPrior {
public:
    JointPrior(MaternPrior b_prior, MaternPrior s_prior)
        : b_(std::move(b_prior)), s_(std::move(s_prior)) {
        if (b_.mesh().n_nodes() != s_.mesh().n_nodes())
            throw config_error("JointPrior: component meshes differ");
    }

    const MaternPrior& b_component() const { return b_; }
    const MaternPrior& s_component() const { return s_; }
    int n() const { return 2 * b_.mesh().n_nodes(); }

    Eigen::VectorXd mean() const {
        Eigen::VectorXd m(n());
        m.head(n() / 2) = b_.mean();
        m.tail(n() / 2) = s_.mean();
        return m;
    }

    Eigen::VectorXd apply_precision(const Eigen::VectorXd& v) const {
        check(v);
        Eigen::VectorXd out(n());
        out.head(n() / 2) = b_.apply_precision(v.head(n() / 2));
        out.tail(n() / 2) = s_.apply_precision(v.tail(n() / 2));
        return out;
    }

    Eigen::VectorXd apply_covariance(const Eigen::VectorXd& v) const {
        check(v);
        Eigen::VectorXd out(n());
        out.head(n() / 2) = b_.apply_covariance(v.head(n() / 2));
        out.tail(n() / 2) = s_.apply_covariance(v.tail(n() / 2));
        return out;
    }

    // zero-mean N(0, C) draw from white noise
    Eigen::VectorXd noise_to_fluctuation(const Eigen::VectorXd& xi) const {
        check(xi);
        Eigen::VectorXd out(n());
        out.head(n() / 2) = b_.sample_from_noise(xi.head(n() / 2)) - b_.mean();
        out.tail(n() / 2) = s_.sample_from_noise(xi.tail(n() / 2)) - s_.mean();
        return out;
    }

    Eigen::VectorXd sample(NormalStream& rng) const {
        Eigen::VectorXd xi(n());
        for (int i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
        return mean() + noise_to_fluctuation(xi);
    }

    // 1/2 ||v||^2 in the precision-weighted norm
    double quad(const Eigen::VectorXd& v) const { return 0.5 * v.dot(apply_precision(v)); }

    // C-weighted inner product <u, C v> used for dual-norm evaluations
    double covariance_inner(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const {
        return u.dot(apply_covariance(v));
    }

private:
    void check(const Eigen::VectorXd& v) const {
        if (v.size() != n()) throw config_error("JointPrior: stacked size mismatch");
    }

    MaternPrior b_, s_;
};

}  // namespace sdebayes
