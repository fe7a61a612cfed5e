#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sdebayes/sde.hpp"

using namespace sdebayes;

namespace {
SdeModel degenerate(double b_coeff) {
    SdeModel m;
    m.drift = [b_coeff](double x) { return b_coeff * x; };
    m.diffusion_sq = [](double) { return 0.0; };
    m.allow_zero_diffusion = true;
    return m;
}

double mean_of(const Eigen::VectorXd& v) { return v.mean(); }
double var_of(const Eigen::VectorXd& v) {
    const double m = v.mean();
    return (v.array() - m).square().sum() / (v.size() - 1);
}
}  // namespace

TEST_CASE("em_step basics", "[sde]") {
    SECTION("zero dynamics") {
        REQUIRE(em_step(0.0, degenerate(0.0), 0.1, 1.0) == 0.0);
    }
    SECTION("deterministic Euler step") {
        REQUIRE(em_step(1.0, degenerate(-1.0), 0.1, 0.37) == Catch::Approx(0.9));
    }
    SECTION("nonpositive diffusion rejected unless explicitly allowed") {
        SdeModel m = brownian_model(2.0);
        m.diffusion_sq = [](double) { return 0.0; };
        REQUIRE_THROWS_AS(em_step(0.0, m, 0.1, 1.0), numerical_error);
        m.diffusion_sq = [](double) { return -1.0; };
        m.allow_zero_diffusion = true;
        REQUIRE_THROWS_AS(em_step(0.0, m, 0.1, 1.0), numerical_error);
    }
    SECTION("non-finite state rejected") {
        REQUIRE_THROWS_AS(em_step(NAN, brownian_model(), 0.1, 0.0), numerical_error);
    }
}

TEST_CASE("ensemble simulation", "[sde]") {
    SECTION("constant path for zero dynamics") {
        auto ens = simulate_ensemble(degenerate(0.0), InitSpec::point(0.7), 1, 10, 0.1,
                                     {0.0, 0.5, 1.0}, 7);
        REQUIRE(ens.states.rows() == 1);
        REQUIRE(ens.states.cols() == 3);
        for (int i = 0; i < 3; ++i) REQUIRE(ens.states(0, i) == Catch::Approx(0.7));
    }
    SECTION("fixed seed reproduces bitwise") {
        auto a = simulate_ensemble(brownian_model(), InitSpec::gaussian(0.0, 1.0), 64, 50, 1e-3,
                                   {0.05}, 1234);
        auto b = simulate_ensemble(brownian_model(), InitSpec::gaussian(0.0, 1.0), 64, 50, 1e-3,
                                   {0.05}, 1234);
        REQUIRE((a.states - b.states).cwiseAbs().maxCoeff() == 0.0);
        auto c = simulate_ensemble(brownian_model(), InitSpec::gaussian(0.0, 1.0), 64, 50, 1e-3,
                                   {0.05}, 1235);
        REQUIRE((a.states - c.states).cwiseAbs().maxCoeff() > 0.0);
    }
    SECTION("Brownian variance grows as sigma^2 t") {
        const long n_traj = 20000, n_steps = 1000;
        const double dt = 1e-4, t = n_steps * dt;  // sigma^2 t = 0.2
        auto ens = simulate_ensemble(brownian_model(2.0), InitSpec::point(0.0), n_traj, n_steps,
                                     dt, {t}, 99);
        const double v = var_of(ens.snapshot(0));
        const double se = 0.2 * std::sqrt(2.0 / (n_traj - 1));
        REQUIRE(std::abs(v - 0.2) < 4.0 * se);
    }
    SECTION("OU snapshot mean decays as exp(-t)") {
        const long n_traj = 20000;
        auto ens = simulate_ensemble(ou_model(), InitSpec::point(1.0), n_traj, 500, 1e-3, {0.5},
                                     2024);
        const double expect = std::exp(-0.5);
        const double sd = std::sqrt(0.5 * (1.0 - std::exp(-1.0)));
        REQUIRE(std::abs(mean_of(ens.snapshot(0)) - expect) < 3.0 * sd / std::sqrt(n_traj));
    }
    SECTION("off-grid snapshot times rejected") {
        REQUIRE_THROWS_AS(simulate_ensemble(brownian_model(), InitSpec::point(0.0), 1, 10, 0.1,
                                            {0.05}, 1),
                          config_error);
        REQUIRE_THROWS_AS(simulate_ensemble(brownian_model(), InitSpec::point(0.0), 1, 10, 0.1,
                                            {1.1}, 1),
                          config_error);
        REQUIRE_THROWS_AS(simulate_ensemble(brownian_model(), InitSpec::point(0.0), 1, 10, 0.1,
                                            {0.5, 0.2}, 1),
                          config_error);
    }
}

TEST_CASE("exit time sampling", "[sde]") {
    SECTION("site must be interior") {
        REQUIRE_THROWS_AS(simulate_exit_times(brownian_model(2.0), 1.0, -1.0, 1.0, 10, 1e-3, 100, 1),
                          config_error);
        REQUIRE_THROWS_AS(simulate_exit_times(brownian_model(2.0), -2.0, -1.0, 1.0, 10, 1e-3, 100, 1),
                          config_error);
    }
    SECTION("mean exit time matches the analytic value at the center") {
        // b=0, sigma^2=2 on (-1,1): tau(x) = (1-x^2)/2, Var(tau(0)) = 1/6
        const long n = 4000;
        auto s = simulate_exit_times(brownian_model(2.0), 0.0, -1.0, 1.0, n, 1e-4, 200000, 31);
        REQUIRE(s.censored_count == 0);
        REQUIRE(s.n_traj() == n);
        double mean = 0.0;
        for (double t : s.times) mean += t;
        mean /= static_cast<double>(s.times.size());
        const double se = std::sqrt((1.0 / 6.0) / n);
        REQUIRE(std::abs(mean - 0.5) < 4.0 * se);
        for (double t : s.times) {
            REQUIRE(t > 0.0);
            REQUIRE(t <= s.max_steps * s.dt);
        }
    }
    SECTION("near-boundary site exits almost immediately") {
        auto s = simulate_exit_times(brownian_model(2.0), 0.999, -1.0, 1.0, 500, 1e-4, 200000, 5);
        double mean = 0.0;
        for (double t : s.times) mean += t;
        mean /= static_cast<double>(s.times.size());
        REQUIRE(mean < 0.05);
    }
    SECTION("censoring is counted, not dropped") {
        auto s = simulate_exit_times(brownian_model(0.01), 0.0, -1.0, 1.0, 50, 1e-4, 10, 77);
        REQUIRE(s.censored_count == 50);
        REQUIRE(s.times.empty());
        REQUIRE(s.n_traj() == 50);
    }
}

TEST_CASE("effective coarse-grain coefficients", "[sde]") {
    SECTION("reference parameter values") {
        auto c = effective_coefficients({.epsilon = 0.1, .q1 = 1, .q2 = 1, .nu = 1});
        REQUIRE(c.A == Catch::Approx(1.0 + 1.0 / 396.0 + 1.0 / 352.0).epsilon(1e-14));
        REQUIRE(c.A == Catch::Approx(1.0053662).epsilon(1e-6));
        REQUIRE(c.B == Catch::Approx(1.0 / 12.0).epsilon(1e-14));
        REQUIRE(c.sigma_a == Catch::Approx(1.0 / 2112.0).epsilon(1e-14));
        REQUIRE(c.sigma_b == Catch::Approx(1.0 / 36.0).epsilon(1e-14));
    }
    SECTION("noise-free limit") {
        auto c = effective_coefficients({.epsilon = 0.1, .q1 = 0, .q2 = 0, .nu = 1});
        REQUIRE(c.A == Catch::Approx(1.0));
        REQUIRE(c.B == Catch::Approx(1.0 / 12.0));
        REQUIRE(c.sigma_a == 0.0);
        REQUIRE(c.sigma_b == 0.0);
    }
    SECTION("scaling in q1, q2") {
        auto c = effective_coefficients({.epsilon = 0.1, .q1 = 2, .q2 = 1, .nu = 0});
        REQUIRE(c.A == Catch::Approx(4.0 / 396.0 + 1.0 / 352.0).epsilon(1e-14));
        REQUIRE(c.sigma_a == Catch::Approx(4.0 / 2112.0).epsilon(1e-14));
        REQUIRE(c.sigma_b == Catch::Approx(4.0 / 36.0).epsilon(1e-14));
    }
}

TEST_CASE("multiscale simulation", "[sde]") {
    SECTION("noise-free system is deterministic across trajectories") {
        MultiscaleParams p{.epsilon = 0.1, .q1 = 0, .q2 = 0, .nu = 1};
        auto ens = simulate_multiscale(p, InitSpec::point(1.0), 8, 2000, 5e-5, {0.1}, 11);
        for (int j = 1; j < 8; ++j)
            REQUIRE(ens.states(j, 0) == ens.states(0, 0));
        REQUIRE(std::isfinite(ens.states(0, 0)));
    }
    SECTION("fixed seed reproduces bitwise") {
        MultiscaleParams p;
        auto a = simulate_multiscale(p, InitSpec::gaussian(0.0, 0.5), 32, 200, 5e-4, {0.1}, 3);
        auto b = simulate_multiscale(p, InitSpec::gaussian(0.0, 0.5), 32, 200, 5e-4, {0.1}, 3);
        REQUIRE((a.states - b.states).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("slow-variable spread tracks the effective model") {
        MultiscaleParams p;  // epsilon=0.1, q1=q2=nu=1
        const long n_traj = 400, n_steps = 4000;
        const double dt = 5e-4, t_end = n_steps * dt;
        auto ms = simulate_multiscale(p, InitSpec::point(1.0), n_traj, n_steps, dt, {t_end}, 17);
        auto eff = simulate_ensemble(effective_model(p), InitSpec::point(1.0), n_traj, n_steps,
                                     dt, {t_end}, 18);
        const double v_ms = ms.snapshot(0).array().square().mean();
        const double v_eff = eff.snapshot(0).array().square().mean();
        REQUIRE(v_ms > 0.0);
        REQUIRE(std::isfinite(v_ms));
        REQUIRE(v_ms / v_eff > 1.0 / 3.0);
        REQUIRE(v_ms / v_eff < 3.0);
    }
}
