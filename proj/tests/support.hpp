#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <utility>

#include "sdebayes/bip.hpp"
#include "sdebayes/prior.hpp"
#include "sdebayes/rng.hpp"

namespace sdebayes::testing {

// Linear forward map F(m) = J m with Gaussian noise: misfits, gradients and
// Hessians have closed forms, giving dense oracles for the outer algorithms.
// flip_gradient deliberately corrupts the gradient sign to exercise failure paths.
class LinearModel : public MisfitModel {
public:
    LinearModel(Eigen::MatrixXd j, Eigen::VectorXd y, Eigen::VectorXd gamma_diag,
                bool flip_gradient = false)
        : j_(std::move(j)), y_(std::move(y)), gamma_inv_(gamma_diag.cwiseInverse()),
          flip_(flip_gradient) {
        if (y_.size() != j_.rows() || gamma_inv_.size() != j_.rows())
            throw config_error("LinearModel: shape mismatch");
    }

    int n() const override { return static_cast<int>(j_.cols()); }

    Eigen::VectorXd predict(const Eigen::VectorXd& m) const override { return j_ * m; }

    std::unique_ptr<MisfitEval> evaluate(const Eigen::VectorXd& m,
                                         bool with_gradient) const override {
        auto eval = std::make_unique<MisfitEval>();
        const Eigen::VectorXd r = j_ * m - y_;
        eval->value = 0.5 * r.dot(gamma_inv_.cwiseProduct(r));
        if (with_gradient)
            eval->gradient = (flip_ ? -1.0 : 1.0) * j_.transpose() * gamma_inv_.cwiseProduct(r);
        return eval;
    }

    Eigen::VectorXd hessian_vector(const MisfitEval& eval,
                                   const Eigen::VectorXd& v) const override {
        if (!eval.has_gradient())
            throw config_error("LinearModel: hessian_vector needs a gradient evaluation");
        return j_.transpose() * gamma_inv_.cwiseProduct(j_ * v);
    }

    const Eigen::MatrixXd& jacobian() const { return j_; }
    const Eigen::VectorXd& data() const { return y_; }
    Eigen::VectorXd gamma_inv() const { return gamma_inv_; }

private:
    Eigen::MatrixXd j_;
    Eigen::VectorXd y_;
    Eigen::VectorXd gamma_inv_;
    bool flip_;
};

inline Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
    NormalStream rng(seed);
    Eigen::MatrixXd a(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) a(i, j) = rng.normal();
    return a;
}

inline Eigen::VectorXd random_vector(int n, std::uint64_t seed) {
    NormalStream rng(seed);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
}

// Materialize a linear operator column by column.
inline Eigen::MatrixXd dense_operator(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply, int n) {
    Eigen::MatrixXd a(n, n);
    for (int j = 0; j < n; ++j) a.col(j) = apply(Eigen::VectorXd::Unit(n, j));
    return a;
}

inline JointPrior standard_prior(const Mesh1d& mesh, double s_mean = std::log(2.0)) {
    const int nn = mesh.n_nodes();
    MaternPrior pb(mesh, 1.0, 1.0, Eigen::VectorXd::Zero(nn));
    MaternPrior ps(mesh, 1.0, 1.0, Eigen::VectorXd::Constant(nn, s_mean));
    return JointPrior(pb, ps);
}

inline ParameterField mean_field(const Mesh1d& mesh, const JointPrior& prior) {
    return ParameterField::from_stacked(mesh, prior.mean());
}

}  // namespace sdebayes::testing
