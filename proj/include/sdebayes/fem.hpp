#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <vector>

#include "sdebayes/assembly.hpp"
#include "sdebayes/common.hpp"
#include "sdebayes/field.hpp"
#include "sdebayes/mesh.hpp"

namespace sdebayes {

using SparseSolver = Eigen::SparseLU<SpMat>;

inline void factorize(SparseSolver& solver, const SpMat& a, const char* what) {
    SpMat ac = a;
    ac.makeCompressed();
    solver.compute(ac);
    if (solver.info() != Eigen::Success)
        throw numerical_error(std::string(what) + ": sparse factorization failed (singular system)");
}

// Nodal sigma^2 = exp(s), rejecting values that underflow to zero.
inline Eigen::VectorXd checked_sigma_sq(const ParameterField& m) {
    Eigen::VectorXd w = m.sigma_sq();
    if ((w.array() <= 0.0).any())
        throw numerical_error("sigma^2 must be positive (exp(s) underflowed to zero)");
    return w;
}

// Backward-generator Galerkin matrix with homogeneous Dirichlet rows replaced
// by unit-diagonal identity rows.
inline SpMat assemble_generator_backward(const Mesh1d& mesh, const ParameterField& m) {
    if (!(m.mesh.n_cells == mesh.n_cells && m.mesh.a == mesh.a && m.mesh.b == mesh.b))
        throw config_error("assemble_generator_backward: field lives on a different mesh");
    const Eigen::VectorXd w = checked_sigma_sq(m);
    SpMat a = assemble_generator(mesh, m.b, w);
    const int n = mesh.n_nodes();
    // row replacement at the two boundary nodes
    a.prune([n](int row, int, double) { return row != 0 && row != n - 1; });
    a.coeffRef(0, 0) = 1.0;
    a.coeffRef(n - 1, n - 1) = 1.0;
    a.makeCompressed();
    return a;
}

struct PdeSolution {
    Mesh1d mesh;
    Eigen::MatrixXd fields;     // n_nodes x n_columns
    std::vector<double> times;  // FP: time grid matching columns; MFPT: empty
    bool is_fp = false;

    int n_columns() const { return static_cast<int>(fields.cols()); }
    FeFunction column(int j) const { return FeFunction(mesh, fields.col(j)); }
};

// MFPT moment hierarchy with absorbing boundaries: the generator applied to
// tau_1 gives -1, and to tau_n gives -n tau_{n-1}, each with tau_n = 0 on the
// boundary.
inline PdeSolution solve_mfpt_hierarchy(const Mesh1d& mesh, const ParameterField& m, int k) {
    if (k < 1) throw config_error("solve_mfpt_hierarchy: require k >= 1");
    const int n = mesh.n_nodes();
    const SpMat a = assemble_generator(mesh, m.b, checked_sigma_sq(m));
    const SpMat mass = assemble_mass(mesh);
    SparseSolver lu;
    factorize(lu, interior_block(a), "solve_mfpt_hierarchy");

    PdeSolution sol;
    sol.mesh = mesh;
    sol.fields.resize(n, k);
    Eigen::VectorXd prev = Eigen::VectorXd::Ones(n);
    for (int moment = 1; moment <= k; ++moment) {
        const Eigen::VectorXd rhs = -moment * interior(mass * prev);
        const Eigen::VectorXd tau_int = lu.solve(rhs);
        if (lu.info() != Eigen::Success)
            throw numerical_error("solve_mfpt_hierarchy: solve failed");
        prev = pad_interior(tau_int, n);
        sol.fields.col(moment - 1) = prev;
    }
    return sol;
}

// Crank-Nicolson step operators for the forward (Fokker-Planck) equation on
// interior nodes. The forward Galerkin matrix is the transpose of the backward
// one, so lhs = M - dt/2 A^T and rhs = M + dt/2 A^T on the interior block.
struct CrankNicolson {
    SpMat lhs, rhs;  // interior blocks
    SparseSolver lu;
    double dt = 0.0;

    CrankNicolson(const Mesh1d& mesh, const ParameterField& m, double dt_) : dt(dt_) {
        if (dt <= 0.0) throw config_error("CrankNicolson: require dt > 0");
        const SpMat a_int = interior_block(assemble_generator(mesh, m.b, checked_sigma_sq(m)));
        const SpMat mass_int = interior_block(assemble_mass(mesh));
        const SpMat at = SpMat(a_int.transpose());
        lhs = mass_int - (dt / 2.0) * at;
        rhs = mass_int + (dt / 2.0) * at;
        factorize(lu, lhs, "CrankNicolson");
    }

    Eigen::VectorXd step(const Eigen::VectorXd& p_int) const {
        Eigen::VectorXd out = lu.solve(rhs * p_int);
        if (lu.info() != Eigen::Success) throw numerical_error("CrankNicolson: solve failed");
        return out;
    }
};

inline PdeSolution solve_fokker_planck(const Mesh1d& mesh, const ParameterField& m,
                                       const FeFunction& p0, double t_end, int n_time_steps) {
    if (n_time_steps < 0 || (n_time_steps > 0 && t_end <= 0.0))
        throw config_error("solve_fokker_planck: require n_time_steps >= 0 and t_end > 0");
    if (p0.values.size() != mesh.n_nodes())
        throw config_error("solve_fokker_planck: p0 size mismatch");
    if ((p0.values.array() < 0.0).any())
        throw data_error("solve_fokker_planck: p0 must be nonnegative");
    {
        const Eigen::VectorXd mass_rows = assemble_mass(mesh) * p0.values;
        const double total = mass_rows.sum();
        if (std::abs(total - 1.0) > 0.01)
            warn("solve_fokker_planck: initial density integrates to " + std::to_string(total));
    }

    const int n = mesh.n_nodes();
    PdeSolution sol;
    sol.mesh = mesh;
    sol.is_fp = true;
    sol.fields.resize(n, n_time_steps + 1);
    sol.times.resize(n_time_steps + 1);

    Eigen::VectorXd p_int = interior(p0.values);
    sol.fields.col(0) = pad_interior(p_int, n);
    sol.times[0] = 0.0;
    if (n_time_steps == 0) return sol;

    const double dt = t_end / n_time_steps;
    CrankNicolson cn(mesh, m, dt);
    for (int j = 1; j <= n_time_steps; ++j) {
        p_int = cn.step(p_int);
        sol.fields.col(j) = pad_interior(p_int, n);
        sol.times[j] = j * dt;
    }
    return sol;
}

// Point-observation operator: sparse q x n_nodes interpolation matrix.
inline SpMat observation_matrix(const Mesh1d& mesh, const Eigen::VectorXd& locations) {
    const int q = static_cast<int>(locations.size());
    std::vector<Triplet> trips;
    trips.reserve(2 * q);
    for (int i = 0; i < q; ++i) {
        const double x = locations[i];
        if (!mesh.contains(x))
            throw config_error("observation location " + std::to_string(x) +
                               " lies outside the mesh");
        const int k = mesh.locate(x);
        const double t = (x - mesh.node(k)) / mesh.h();
        trips.emplace_back(i, k, 1.0 - t);
        trips.emplace_back(i, k + 1, t);
    }
    SpMat b(q, mesh.n_nodes());
    b.setFromTriplets(trips.begin(), trips.end());
    return b;
}

inline int time_index_on_grid(const std::vector<double>& grid, double t) {
    for (int j = 0; j < static_cast<int>(grid.size()); ++j)
        if (std::abs(grid[j] - t) <= 1e-8 * std::max(1.0, std::abs(t))) return j;
    throw config_error("requested time " + std::to_string(t) + " is not on the stored time grid");
}

// Stack point observations of a solution: blocks (moments or times) outer,
// locations inner.
inline Eigen::VectorXd observe(const PdeSolution& sol, const Eigen::VectorXd& locations,
                               const std::vector<double>& times = {}) {
    const SpMat b = observation_matrix(sol.mesh, locations);
    const int q = static_cast<int>(locations.size());
    if (!sol.is_fp) {
        if (!times.empty()) throw config_error("observe: moment solutions carry no time grid");
        Eigen::VectorXd y(q * sol.n_columns());
        for (int n = 0; n < sol.n_columns(); ++n) y.segment(n * q, q) = b * sol.fields.col(n);
        return y;
    }
    const std::vector<double>& ts = times.empty() ? sol.times : times;
    Eigen::VectorXd y(q * static_cast<int>(ts.size()));
    for (int i = 0; i < static_cast<int>(ts.size()); ++i) {
        const int j = time_index_on_grid(sol.times, ts[i]);
        y.segment(i * q, q) = b * sol.fields.col(j);
    }
    return y;
}

// L2 norm of a nodal field through the mass matrix.
inline double l2_norm(const Mesh1d& mesh, const Eigen::VectorXd& v) {
    return std::sqrt(v.dot(assemble_mass(mesh) * v));
}

}  // namespace sdebayes
