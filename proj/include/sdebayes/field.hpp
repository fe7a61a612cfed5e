#pragma once

#include <Eigen/Dense>

#include "sdebayes/common.hpp"
#include "sdebayes/mesh.hpp"

namespace sdebayes {

// Inference parameter m = (b, s): nodal drift values and nodal log squared
// diffusion, sigma^2 = exp(s).
struct ParameterField {
    Mesh1d mesh;
    Eigen::VectorXd b;
    Eigen::VectorXd s;

    ParameterField() = default;
    ParameterField(const Mesh1d& m, Eigen::VectorXd b_, Eigen::VectorXd s_)
        : mesh(m), b(std::move(b_)), s(std::move(s_)) {
        if (b.size() != mesh.n_nodes() || s.size() != mesh.n_nodes())
            throw config_error("ParameterField: nodal size mismatch");
    }

    int n_nodes() const { return mesh.n_nodes(); }

    Eigen::VectorXd sigma_sq() const {
        Eigen::VectorXd w = s.array().exp();
        if (!w.allFinite())
            throw numerical_error("ParameterField: exp(s) overflows or is not finite");
        return w;
    }

    // Stacked coefficient vector [b; s] of size 2 * n_nodes.
    Eigen::VectorXd stacked() const {
        Eigen::VectorXd v(2 * n_nodes());
        v.head(n_nodes()) = b;
        v.tail(n_nodes()) = s;
        return v;
    }

    static ParameterField from_stacked(const Mesh1d& mesh, const Eigen::VectorXd& v) {
        const int n = mesh.n_nodes();
        if (v.size() != 2 * n) throw config_error("ParameterField: stacked size mismatch");
        return ParameterField(mesh, v.head(n), v.tail(n));
    }
};

}  // namespace sdebayes
