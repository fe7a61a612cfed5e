#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "sdebayes/data_prep.hpp"
#include "sdebayes/rng.hpp"

using namespace sdebayes;

namespace {
ExitTimeSample make_sample(std::vector<double> times, long censored = 0) {
    ExitTimeSample s;
    s.site = 0.0;
    s.a_left = -1.0;
    s.a_right = 1.0;
    s.dt = 1e-3;
    s.max_steps = 1000000;
    s.times = std::move(times);
    s.censored_count = censored;
    return s;
}
}  // namespace

TEST_CASE("mfpt moment estimators", "[data_prep]") {
    SECTION("constant sample") {
        auto m = mfpt_moments(make_sample({2, 2, 2, 2}));
        REQUIRE(m.tau1 == Catch::Approx(2.0));
        REQUIRE(m.tau2 == Catch::Approx(4.0));
        REQUIRE(m.se1 == 0.0);
        REQUIRE(m.se2 == 0.0);
        REQUIRE(m.n1 == 2);
        REQUIRE(m.n2 == 2);
    }
    SECTION("hand-computed split") {
        auto m = mfpt_moments(make_sample({1, 3, 2, 2}));
        REQUIRE(m.tau1 == Catch::Approx(2.0));  // mean of [1,3]
        REQUIRE(m.tau2 == Catch::Approx(4.0));  // mean of [4,4]
        REQUIRE(m.se1 == Catch::Approx(1.0));   // S1 = sqrt(2), / sqrt(2)
        REQUIRE(m.se2 == 0.0);
    }
    SECTION("disjoint sub-ensembles: first half never feeds the second moment") {
        // second half all zeros: tau2 must be 0 regardless of the first half
        auto m = mfpt_moments(make_sample({5, 7, 0, 0}));
        REQUIRE(m.tau2 == 0.0);
        REQUIRE(m.tau1 == Catch::Approx(6.0));
    }
    SECTION("everything censored is a data error") {
        REQUIRE_THROWS_AS(mfpt_moments(make_sample({}, 100)), data_error);
    }
    SECTION("odd or tiny samples rejected") {
        REQUIRE_THROWS_AS(mfpt_moments(make_sample({1, 2, 3, 4, 5})), config_error);
        REQUIRE_THROWS_AS(mfpt_moments(make_sample({1, 2})), config_error);
    }
    SECTION("standard error scales as 1/sqrt(N)") {
        // Exponential(1) exits: Var tau = 1, SE1 ~ 1/sqrt(N/2)
        std::mt19937_64 eng(7);
        std::exponential_distribution<double> exp1(1.0);
        auto draw = [&](long n) {
            std::vector<double> t(n);
            for (auto& v : t) v = exp1(eng);
            return t;
        };
        auto small = mfpt_moments(make_sample(draw(2000)));
        auto large = mfpt_moments(make_sample(draw(8000)));
        // quadrupling N halves the SE, allow wide stochastic slack
        const double ratio = small.se1 / large.se1;
        REQUIRE(ratio > 1.4);
        REQUIRE(ratio < 2.9);
    }
}

TEST_CASE("kernel density estimate", "[data_prep]") {
    SECTION("single kernel evaluation") {
        Eigen::VectorXd states(1);
        states << 0.0;
        Eigen::VectorXd grid(2);
        grid << 0.0, 1.0;
        auto [p, v] = kde_estimate(states, grid, 1.0);
        const double c = 1.0 / std::sqrt(2.0 * M_PI);
        REQUIRE(p[0] == Catch::Approx(c).epsilon(1e-12));
        REQUIRE(p[1] == Catch::Approx(c * std::exp(-0.5)).epsilon(1e-12));
        REQUIRE(v[0] == Catch::Approx(p[0] * kGaussKernelVar).epsilon(1e-12));
    }
    SECTION("estimate integrates to one") {
        NormalStream rng(123);
        Eigen::VectorXd states(500);
        for (int i = 0; i < 500; ++i) states[i] = rng.normal();
        const int ng = 801;
        Eigen::VectorXd grid(ng);
        for (int i = 0; i < ng; ++i) grid[i] = -8.0 + 16.0 * i / (ng - 1);
        auto [p, v] = kde_estimate(states, grid, 0.3);
        double integral = 0.0;
        for (int i = 0; i + 1 < ng; ++i) integral += 0.5 * (p[i] + p[i + 1]) * (grid[1] - grid[0]);
        REQUIRE(std::abs(integral - 1.0) < 1e-3);
    }
    SECTION("large-sample estimate approaches the true density") {
        NormalStream rng(4);
        const long n = 100000;
        Eigen::VectorXd states(n);
        for (long i = 0; i < n; ++i) states[i] = rng.normal();
        Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(41, -2.0, 2.0);
        auto [p, v] = kde_estimate(states, grid, 0.05);
        double worst = 0.0;
        for (int i = 0; i < grid.size(); ++i) {
            const double exact = std::exp(-0.5 * sq(grid[i])) / std::sqrt(2.0 * M_PI);
            worst = std::max(worst, std::abs(p[i] - exact));
        }
        REQUIRE(worst < 0.01);
    }
    SECTION("permutation invariance") {
        Eigen::VectorXd states(5);
        states << 0.3, -1.2, 0.8, 2.0, -0.5;
        Eigen::VectorXd perm(5);
        perm << 2.0, 0.3, -0.5, -1.2, 0.8;
        Eigen::VectorXd grid(3);
        grid << -1.0, 0.0, 1.0;
        auto [p1, v1] = kde_estimate(states, grid, 0.4);
        auto [p2, v2] = kde_estimate(perm, grid, 0.4);
        REQUIRE((p1 - p2).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("bandwidth diagnostic", "[data_prep]") {
    REQUIRE(check_bandwidth(100000, 0.05) == Catch::Approx(12.5));
    REQUIRE(check_bandwidth(100000, 0.005) == Catch::Approx(0.0125));
    REQUIRE(check_bandwidth(1000, 1e-4) < 1e-8);
    REQUIRE_THROWS_AS(check_bandwidth(0, 0.1), config_error);
}

TEST_CASE("observation set stacking", "[data_prep]") {
    SECTION("moment data: moments outer, sites inner") {
        MomentData d;
        d.sites.resize(2);
        d.sites << -0.5, 0.5;
        d.tau1_hat.resize(2);
        d.tau1_hat << 0.4, 0.3;
        d.tau2_hat.resize(2);
        d.tau2_hat << 0.25, 0.15;
        d.se1.resize(2);
        d.se1 << 0.1, 0.2;
        d.se2.resize(2);
        d.se2 << 0.05, 0.0;
        auto obs = build_observation_set(d, 1e-8);
        REQUIRE(obs.kind == "mfpt");
        REQUIRE(obs.y.size() == 4);
        REQUIRE(obs.y[0] == Catch::Approx(0.4));
        REQUIRE(obs.y[1] == Catch::Approx(0.3));
        REQUIRE(obs.y[2] == Catch::Approx(0.25));
        REQUIRE(obs.y[3] == Catch::Approx(0.15));
        REQUIRE(obs.gamma_diag[0] == Catch::Approx(0.01));
        REQUIRE(obs.gamma_diag[1] == Catch::Approx(0.04));
        REQUIRE(obs.gamma_diag[3] == Catch::Approx(1e-8));  // floored
        REQUIRE(obs.n_blocks() == 2);
        REQUIRE(obs.q() == 2);
    }
    SECTION("density data: times outer, sites inner") {
        DensityData d;
        d.grid.resize(2);
        d.grid << 0.0, 1.0;
        d.times = {0.1, 0.5, 0.9};
        d.p_hat.resize(2, 3);
        d.p_hat << 1, 2, 3, 4, 5, 6;
        d.var_hat = Eigen::MatrixXd::Constant(2, 3, 1e-4);
        d.bandwidth = 0.1;
        auto obs = build_observation_set(d, 1e-8);
        REQUIRE(obs.kind == "fp");
        REQUIRE(obs.y.size() == 6);
        // column b of p_hat becomes block b
        REQUIRE(obs.y[0] == Catch::Approx(1.0));
        REQUIRE(obs.y[1] == Catch::Approx(4.0));
        REQUIRE(obs.y[2] == Catch::Approx(2.0));
        REQUIRE(obs.y[5] == Catch::Approx(6.0));
        REQUIRE(obs.gamma_diag.minCoeff() == Catch::Approx(1e-4));
        REQUIRE(obs.n_blocks() == 3);
    }
    SECTION("51-site two-moment layout") {
        MomentData d;
        d.sites = Eigen::VectorXd::LinSpaced(51, -0.9, 0.9);
        d.tau1_hat = Eigen::VectorXd::Ones(51);
        d.tau2_hat = Eigen::VectorXd::Ones(51);
        d.se1 = Eigen::VectorXd::Constant(51, 0.1);
        d.se2 = Eigen::VectorXd::Constant(51, 0.1);
        auto obs = build_observation_set(d);
        REQUIRE(obs.y.size() == 102);
        REQUIRE(obs.gamma_diag.size() == 102);
        REQUIRE(obs.gamma_diag.minCoeff() > 0.0);
    }
}

TEST_CASE("density data pipeline over an ensemble", "[data_prep]") {
    auto ens = simulate_ensemble(brownian_model(2.0), InitSpec::gaussian(0.0, 0.5), 2000, 100,
                                 1e-3, {0.05, 0.1}, 321);
    Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(11, -2.0, 2.0);
    auto d = density_data(ens, grid, 0.2);
    REQUIRE(d.p_hat.rows() == 11);
    REQUIRE(d.p_hat.cols() == 2);
    REQUIRE((d.p_hat.array() >= 0.0).all());
    REQUIRE((d.var_hat.array() >= 0.0).all());
    REQUIRE(d.times.size() == 2);
}
