#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "sdebayes/assembly.hpp"
#include "sdebayes/mesh.hpp"
#include "sdebayes/rng.hpp"

using namespace sdebayes;

namespace {
Eigen::MatrixXd dense(const SpMat& a) { return Eigen::MatrixXd(a); }
}  // namespace

TEST_CASE("mesh basics", "[mesh]") {
    Mesh1d mesh(-1.0, 3.0, 8);
    REQUIRE(mesh.n_nodes() == 9);
    REQUIRE(mesh.h() == Catch::Approx(0.5));
    REQUIRE(mesh.node(0) == Catch::Approx(-1.0));
    REQUIRE(mesh.node(8) == Catch::Approx(3.0));

    SECTION("locate clamps to valid cells") {
        REQUIRE(mesh.locate(-1.0) == 0);
        REQUIRE(mesh.locate(3.0) == 7);
        REQUIRE(mesh.locate(-5.0) == 0);
        REQUIRE(mesh.locate(5.0) == 7);
        REQUIRE(mesh.locate(0.25) == 2);
    }
    SECTION("invalid construction throws") {
        REQUIRE_THROWS_AS(Mesh1d(1.0, 1.0, 4), config_error);
        REQUIRE_THROWS_AS(Mesh1d(0.0, 1.0, 0), config_error);
    }
}

TEST_CASE("linspace", "[mesh]") {
    auto v = linspace(0.0, 1.0, 5);
    REQUIRE(v.size() == 5);
    REQUIRE(v[0] == Catch::Approx(0.0));
    REQUIRE(v[1] == Catch::Approx(0.25));
    REQUIRE(v[4] == Catch::Approx(1.0));
    auto single = linspace(2.0, 7.0, 1);
    REQUIRE(single[0] == Catch::Approx(2.0));
    REQUIRE_THROWS_AS(linspace(0.0, 1.0, 0), config_error);
}

TEST_CASE("piecewise linear interpolation", "[mesh]") {
    Mesh1d mesh(0.0, 2.0, 4);
    auto f = interpolate(mesh, [](double x) { return x * x; });
    for (int i = 0; i < mesh.n_nodes(); ++i)
        REQUIRE(f(mesh.node(i)) == Catch::Approx(sq(mesh.node(i))));
    // midpoint of a cell is the average of the endpoints
    REQUIRE(f(0.25) == Catch::Approx(0.5 * (0.0 + 0.25)));
    REQUIRE(f.deriv(0.25) == Catch::Approx((0.25 - 0.0) / 0.5));
}

TEST_CASE("mass matrix hand assembly", "[assembly]") {
    Mesh1d mesh(0.0, 1.0, 2);  // h = 1/2
    Eigen::MatrixXd m = dense(assemble_mass(mesh));
    Eigen::MatrixXd expect(3, 3);
    expect << 2, 1, 0, 1, 4, 1, 0, 1, 2;
    expect /= 12.0;
    REQUIRE((m - expect).cwiseAbs().maxCoeff() < 1e-15);

    SECTION("total mass is the domain length") {
        Mesh1d wide(-2.0, 5.0, 13);
        REQUIRE(dense(assemble_mass(wide)).sum() == Catch::Approx(7.0));
    }
    SECTION("lumped diagonal equals row sums") {
        Mesh1d any(-1.0, 2.0, 7);
        Eigen::VectorXd rows = dense(assemble_mass(any)).rowwise().sum();
        Eigen::VectorXd lump = lumped_mass_diag(any);
        REQUIRE((rows - lump).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("stiffness matrix hand assembly", "[assembly]") {
    Mesh1d mesh(0.0, 1.0, 2);
    Eigen::MatrixXd k = dense(assemble_stiffness(mesh));
    Eigen::MatrixXd expect(3, 3);
    expect << 2, -2, 0, -2, 4, -2, 0, -2, 2;
    REQUIRE((k - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("weighted mass and stiffness, linear weight", "[assembly]") {
    // single cell on (0,1), w(x) = x: entries are 1/12, 1/12, 1/4
    Mesh1d mesh(0.0, 1.0, 1);
    Eigen::VectorXd w(2);
    w << 0.0, 1.0;
    Eigen::MatrixXd mw = dense(assemble_weighted_mass(mesh, w));
    REQUIRE(mw(0, 0) == Catch::Approx(1.0 / 12.0));
    REQUIRE(mw(0, 1) == Catch::Approx(1.0 / 12.0));
    REQUIRE(mw(1, 0) == Catch::Approx(1.0 / 12.0));
    REQUIRE(mw(1, 1) == Catch::Approx(1.0 / 4.0));

    Eigen::MatrixXd kw = dense(assemble_weighted_stiffness(mesh, w));
    REQUIRE(kw(0, 0) == Catch::Approx(0.5));
    REQUIRE(kw(0, 1) == Catch::Approx(-0.5));

    SECTION("unit weight reduces to plain matrices") {
        Mesh1d m2(-1.0, 1.0, 6);
        Eigen::VectorXd ones = Eigen::VectorXd::Ones(m2.n_nodes());
        REQUIRE((dense(assemble_weighted_mass(m2, ones)) - dense(assemble_mass(m2)))
                    .cwiseAbs()
                    .maxCoeff() < 1e-14);
        REQUIRE((dense(assemble_weighted_stiffness(m2, ones)) - dense(assemble_stiffness(m2)))
                    .cwiseAbs()
                    .maxCoeff() < 1e-14);
    }
}

TEST_CASE("boundary mass", "[assembly]") {
    Mesh1d mesh(0.0, 1.0, 4);
    Eigen::MatrixXd b = dense(boundary_mass(mesh));
    REQUIRE(b(0, 0) == Catch::Approx(1.0));
    REQUIRE(b(4, 4) == Catch::Approx(1.0));
    REQUIRE(b.sum() == Catch::Approx(2.0));
}

TEST_CASE("generator assembly", "[assembly]") {
    SECTION("zero drift, constant diffusion reduces to minus stiffness") {
        Mesh1d mesh(-1.0, 1.0, 10);
        Eigen::VectorXd zero = Eigen::VectorXd::Zero(mesh.n_nodes());
        Eigen::VectorXd two = Eigen::VectorXd::Constant(mesh.n_nodes(), 2.0);
        Eigen::MatrixXd a = dense(assemble_generator(mesh, zero, two));
        Eigen::MatrixXd k = dense(assemble_stiffness(mesh));
        REQUIRE((a + k).cwiseAbs().maxCoeff() < 1e-13);
    }
    SECTION("pure advection, single cell") {
        // a(phi_j, phi_i) = int phi_j' phi_i on (0,1): [[-1/2, 1/2], [-1/2, 1/2]]
        Mesh1d mesh(0.0, 1.0, 1);
        Eigen::VectorXd one = Eigen::VectorXd::Ones(2);
        Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
        Eigen::MatrixXd a = dense(assemble_generator(mesh, one, zero));
        REQUIRE(a(0, 0) == Catch::Approx(-0.5));
        REQUIRE(a(0, 1) == Catch::Approx(0.5));
        REQUIRE(a(1, 0) == Catch::Approx(-0.5));
        REQUIRE(a(1, 1) == Catch::Approx(0.5));
    }
    SECTION("constant coefficients annihilate constants") {
        // columns of A applied to the all-ones vector: a(1, phi_i) = 0
        Mesh1d mesh(0.0, 3.0, 9);
        Eigen::VectorXd beta = Eigen::VectorXd::Constant(mesh.n_nodes(), 0.7);
        Eigen::VectorXd w = Eigen::VectorXd::Constant(mesh.n_nodes(), 1.3);
        Eigen::VectorXd au = dense(assemble_generator(mesh, beta, w)) *
                             Eigen::VectorXd::Ones(mesh.n_nodes());
        REQUIRE(au.cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("control assembly matches bilinear form exactly", "[assembly]") {
    // a(u,p) is linear in the coefficient pair (beta, w), so for any u, p:
    //   p . A(beta, w) u  ==  beta . c_b(u,p) + w . c_w(u,p)
    Mesh1d mesh(-1.5, 2.0, 17);
    const int n = mesh.n_nodes();
    NormalStream rng(42);
    auto draw = [&] {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v[i] = rng.normal();
        return v;
    };
    for (int rep = 0; rep < 5; ++rep) {
        Eigen::VectorXd u = draw(), p = draw(), beta = draw(), w = draw();
        double lhs = p.dot(assemble_generator(mesh, beta, w) * u);
        auto [cb, cw] = control_assembly(mesh, u, p);
        double rhs = beta.dot(cb) + w.dot(cw);
        REQUIRE(lhs == Catch::Approx(rhs).margin(1e-12));
    }
}

TEST_CASE("interior restriction round trip", "[assembly]") {
    Mesh1d mesh(0.0, 1.0, 5);
    Eigen::VectorXd v(6);
    v << 9, 1, 2, 3, 4, 9;
    Eigen::VectorXd vi = interior(v);
    REQUIRE(vi.size() == 4);
    REQUIRE(vi[0] == Catch::Approx(1.0));
    Eigen::VectorXd back = pad_interior(vi, 6);
    REQUIRE(back[0] == 0.0);
    REQUIRE(back[5] == 0.0);
    REQUIRE(back[2] == Catch::Approx(2.0));

    SpMat m = assemble_mass(mesh);
    Eigen::MatrixXd mi = Eigen::MatrixXd(interior_block(m));
    REQUIRE(mi.rows() == 4);
    REQUIRE(mi(0, 0) == Catch::Approx(dense(m)(1, 1)));
}
