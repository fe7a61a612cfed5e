#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "sdebayes/common.hpp"
#include "sdebayes/mesh.hpp"

namespace sdebayes {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// Two-point Gauss rule on each cell; exact for cubics, which covers every
// element integrand arising below (P1 coefficients times P1 basis products).
struct ElementQuad {
    std::array<double, 2> t;  // reference coordinates in [0,1]
    std::array<double, 2> w;  // weights summing to 1 (scale by h)

    ElementQuad() {
        const double d = 0.5 / std::sqrt(3.0);
        t = {0.5 - d, 0.5 + d};
        w = {0.5, 0.5};
    }
};

inline SpMat assemble_mass(const Mesh1d& mesh) {
    const double h = mesh.h();
    const int n = mesh.n_nodes();
    std::vector<Triplet> trips;
    trips.reserve(3 * n);
    for (int k = 0; k < mesh.n_cells; ++k) {
        trips.emplace_back(k, k, h / 3.0);
        trips.emplace_back(k, k + 1, h / 6.0);
        trips.emplace_back(k + 1, k, h / 6.0);
        trips.emplace_back(k + 1, k + 1, h / 3.0);
    }
    SpMat m(n, n);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

inline SpMat assemble_stiffness(const Mesh1d& mesh) {
    const double h = mesh.h();
    const int n = mesh.n_nodes();
    std::vector<Triplet> trips;
    trips.reserve(4 * mesh.n_cells);
    for (int k = 0; k < mesh.n_cells; ++k) {
        trips.emplace_back(k, k, 1.0 / h);
        trips.emplace_back(k, k + 1, -1.0 / h);
        trips.emplace_back(k + 1, k, -1.0 / h);
        trips.emplace_back(k + 1, k + 1, 1.0 / h);
    }
    SpMat m(n, n);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

// M_w[i,j] = int w phi_i phi_j with w given by nodal values (P1 interpolant).
inline SpMat assemble_weighted_mass(const Mesh1d& mesh, const Eigen::VectorXd& w) {
    if (w.size() != mesh.n_nodes()) throw config_error("weighted mass: nodal size mismatch");
    const double h = mesh.h();
    const int n = mesh.n_nodes();
    const ElementQuad q;
    std::vector<Triplet> trips;
    trips.reserve(4 * mesh.n_cells);
    for (int k = 0; k < mesh.n_cells; ++k) {
        double e00 = 0, e01 = 0, e11 = 0;
        for (int g = 0; g < 2; ++g) {
            const double t = q.t[g];
            const double wq = (1.0 - t) * w[k] + t * w[k + 1];
            const double p0 = 1.0 - t, p1 = t;
            const double s = q.w[g] * h * wq;
            e00 += s * p0 * p0;
            e01 += s * p0 * p1;
            e11 += s * p1 * p1;
        }
        trips.emplace_back(k, k, e00);
        trips.emplace_back(k, k + 1, e01);
        trips.emplace_back(k + 1, k, e01);
        trips.emplace_back(k + 1, k + 1, e11);
    }
    SpMat m(n, n);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

// K_w[i,j] = int w phi_i' phi_j' with w P1.
inline SpMat assemble_weighted_stiffness(const Mesh1d& mesh, const Eigen::VectorXd& w) {
    if (w.size() != mesh.n_nodes()) throw config_error("weighted stiffness: nodal size mismatch");
    const double h = mesh.h();
    const int n = mesh.n_nodes();
    std::vector<Triplet> trips;
    trips.reserve(4 * mesh.n_cells);
    for (int k = 0; k < mesh.n_cells; ++k) {
        const double wbar = 0.5 * (w[k] + w[k + 1]);  // exact: integrand linear per cell
        const double e = wbar / h;
        trips.emplace_back(k, k, e);
        trips.emplace_back(k, k + 1, -e);
        trips.emplace_back(k + 1, k, -e);
        trips.emplace_back(k + 1, k + 1, e);
    }
    SpMat m(n, n);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

// Boundary mass: int_{boundary} u v = u(a)v(a) + u(b)v(b).
inline SpMat boundary_mass(const Mesh1d& mesh) {
    const int n = mesh.n_nodes();
    std::vector<Triplet> trips{Triplet(0, 0, 1.0), Triplet(n - 1, n - 1, 1.0)};
    SpMat m(n, n);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

// Diagonal of the row-sum lumped mass matrix.
inline Eigen::VectorXd lumped_mass_diag(const Mesh1d& mesh) {
    const int n = mesh.n_nodes();
    Eigen::VectorXd d = Eigen::VectorXd::Constant(n, mesh.h());
    d[0] = 0.5 * mesh.h();
    d[n - 1] = 0.5 * mesh.h();
    return d;
}

// Bilinear form of the generator with drift beta and squared diffusion w
// (both nodal P1 vectors):
//   a(u,v) = int beta u' v - 1/2 int w u' v' - 1/2 int w' u' v.
// Row index is the test function, column the trial function: A[i,j] = a(phi_j, phi_i).
inline SpMat assemble_generator(const Mesh1d& mesh, const Eigen::VectorXd& beta,
                                const Eigen::VectorXd& w) {
    if (beta.size() != mesh.n_nodes() || w.size() != mesh.n_nodes())
        throw config_error("generator: nodal size mismatch");
    const double h = mesh.h();
    const int n = mesh.n_nodes();
    const ElementQuad q;
    std::vector<Triplet> trips;
    trips.reserve(4 * mesh.n_cells);
    for (int k = 0; k < mesh.n_cells; ++k) {
        // local matrix e[i][j], i = test (row), j = trial (col), both in {k, k+1}
        double e[2][2] = {{0, 0}, {0, 0}};
        const double dphi[2] = {-1.0 / h, 1.0 / h};
        const double wprime = (w[k + 1] - w[k]) / h;
        for (int g = 0; g < 2; ++g) {
            const double t = q.t[g];
            const double bq = (1.0 - t) * beta[k] + t * beta[k + 1];
            const double wq = (1.0 - t) * w[k] + t * w[k + 1];
            const double phi[2] = {1.0 - t, t};
            const double s = q.w[g] * h;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    e[i][j] += s * (bq * dphi[j] * phi[i] - 0.5 * wq * dphi[j] * dphi[i] -
                                    0.5 * wprime * dphi[j] * phi[i]);
        }
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) trips.emplace_back(k + i, k + j, e[i][j]);
    }
    SpMat m(n, n);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

// Gradients of a(u,p) with respect to the nodal values of beta and w:
//   c_b[l] = int phi_l u' p
//   c_w[l] = -1/2 int phi_l u' p' - 1/2 int phi_l' u' p
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> control_assembly(const Mesh1d& mesh,
                                                                    const Eigen::VectorXd& u,
                                                                    const Eigen::VectorXd& p) {
    if (u.size() != mesh.n_nodes() || p.size() != mesh.n_nodes())
        throw config_error("control assembly: nodal size mismatch");
    const double h = mesh.h();
    const int n = mesh.n_nodes();
    const ElementQuad q;
    Eigen::VectorXd cb = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd cw = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < mesh.n_cells; ++k) {
        const double du = (u[k + 1] - u[k]) / h;
        const double dp = (p[k + 1] - p[k]) / h;
        const double dphi[2] = {-1.0 / h, 1.0 / h};
        for (int g = 0; g < 2; ++g) {
            const double t = q.t[g];
            const double pq = (1.0 - t) * p[k] + t * p[k + 1];
            const double phi[2] = {1.0 - t, t};
            const double s = q.w[g] * h;
            for (int l = 0; l < 2; ++l) {
                cb[k + l] += s * phi[l] * du * pq;
                cw[k + l] += s * (-0.5 * phi[l] * du * dp - 0.5 * dphi[l] * du * pq);
            }
        }
    }
    return {cb, cw};
}

// Interior (homogeneous Dirichlet) restriction helpers.
inline SpMat interior_block(const SpMat& a) {
    const int n = a.rows();
    return SpMat(a.block(1, 1, n - 2, n - 2));
}

inline Eigen::VectorXd interior(const Eigen::VectorXd& v) { return v.segment(1, v.size() - 2); }

inline Eigen::VectorXd pad_interior(const Eigen::VectorXd& vi, int n_nodes) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n_nodes);
    v.segment(1, n_nodes - 2) = vi;
    return v;
}

}  // namespace sdebayes
