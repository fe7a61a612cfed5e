#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>

#include "sdebayes/common.hpp"

namespace sdebayes {

// Uniform 1D mesh on [a,b] with n_cells elements and n_cells+1 nodes.
struct Mesh1d {
    double a = 0.0;
    double b = 1.0;
    int n_cells = 1;

    Mesh1d() = default;
    Mesh1d(double a_, double b_, int n_cells_) : a(a_), b(b_), n_cells(n_cells_) {
        if (!(a < b)) throw config_error("mesh: require a < b");
        if (n_cells < 1) throw config_error("mesh: require n_cells >= 1");
    }

    int n_nodes() const { return n_cells + 1; }
    double h() const { return (b - a) / n_cells; }
    double node(int i) const { return a + i * h(); }

    Eigen::VectorXd nodes() const {
        Eigen::VectorXd x(n_nodes());
        for (int i = 0; i < n_nodes(); ++i) x[i] = node(i);
        return x;
    }

    // Index of the cell containing x (clamped to [0, n_cells-1]).
    int locate(double x) const {
        int k = static_cast<int>(std::floor((x - a) / h()));
        return std::clamp(k, 0, n_cells - 1);
    }

    bool contains(double x) const { return x >= a && x <= b; }
};

// Piecewise-linear nodal function on a Mesh1d.
struct FeFunction {
    Mesh1d mesh;
    Eigen::VectorXd values;  // nodal values, size mesh.n_nodes()

    FeFunction() = default;
    FeFunction(const Mesh1d& m, const Eigen::VectorXd& v) : mesh(m), values(v) {
        if (values.size() != mesh.n_nodes())
            throw config_error("FeFunction: nodal vector size mismatch");
    }
    FeFunction(const Mesh1d& m, double constant)
        : mesh(m), values(Eigen::VectorXd::Constant(m.n_nodes(), constant)) {}

    double operator()(double x) const {
        const int k = mesh.locate(x);
        const double xl = mesh.node(k);
        const double t = (x - xl) / mesh.h();
        return (1.0 - t) * values[k] + t * values[k + 1];
    }

    // Derivative on the cell containing x (piecewise constant).
    double deriv(double x) const {
        const int k = mesh.locate(x);
        return (values[k + 1] - values[k]) / mesh.h();
    }
};

inline FeFunction interpolate(const Mesh1d& mesh, const std::function<double(double)>& f) {
    Eigen::VectorXd v(mesh.n_nodes());
    for (int i = 0; i < mesh.n_nodes(); ++i) v[i] = f(mesh.node(i));
    return FeFunction(mesh, v);
}

}  // namespace sdebayes
