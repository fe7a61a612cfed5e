#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdebayes/common.hpp"
#include "sdebayes/sde.hpp"

namespace sdebayes {

// sigma_K^2 = int K(y)^2 dy for the standard normal kernel.
inline constexpr double kGaussKernelVar = 0.28209479177387814;  // 1/(2 sqrt(pi))

struct SiteMoments {
    double tau1 = 0.0, tau2 = 0.0;  // sub-ensemble moment estimates
    double se1 = 0.0, se2 = 0.0;    // standard errors S_alpha / sqrt(N_alpha)
    long n1 = 0, n2 = 0;
};

// Split the exit times into two disjoint sub-ensembles (stable order): the
// first half estimates the first moment, the second half the second moment.
inline SiteMoments mfpt_moments(const ExitTimeSample& sample) {
    const long n = static_cast<long>(sample.times.size());
    if (n == 0) throw data_error("mfpt_moments: all trajectories censored at site " +
                                 std::to_string(sample.site));
    if (n < 4) throw config_error("mfpt_moments: need at least 4 uncensored exits");
    if (n % 2 != 0) throw config_error("mfpt_moments: uncensored sample size must be even");

    SiteMoments out;
    out.n1 = n / 2;
    out.n2 = n - out.n1;
    double m1 = 0.0, m2 = 0.0;
    for (long j = 0; j < out.n1; ++j) m1 += sample.times[j];
    m1 /= static_cast<double>(out.n1);
    for (long j = out.n1; j < n; ++j) m2 += sq(sample.times[j]);
    m2 /= static_cast<double>(out.n2);
    double s1 = 0.0, s2 = 0.0;
    for (long j = 0; j < out.n1; ++j) s1 += sq(sample.times[j] - m1);
    for (long j = out.n1; j < n; ++j) s2 += sq(sq(sample.times[j]) - m2);
    s1 /= static_cast<double>(out.n1 - 1);
    s2 /= static_cast<double>(out.n2 - 1);
    out.tau1 = m1;
    out.tau2 = m2;
    out.se1 = std::sqrt(s1 / static_cast<double>(out.n1));
    out.se2 = std::sqrt(s2 / static_cast<double>(out.n2));
    return out;
}

struct MomentData {
    Eigen::VectorXd sites;
    Eigen::VectorXd tau1_hat, tau2_hat;
    Eigen::VectorXd se1, se2;
    long n1 = 0, n2 = 0;  // sub-ensemble sizes (shared across sites when uniform)
};

inline MomentData mfpt_moment_data(const std::vector<ExitTimeSample>& samples) {
    if (samples.empty()) throw config_error("mfpt_moment_data: no sites");
    const int q = static_cast<int>(samples.size());
    MomentData d;
    d.sites.resize(q);
    d.tau1_hat.resize(q);
    d.tau2_hat.resize(q);
    d.se1.resize(q);
    d.se2.resize(q);
    for (int i = 0; i < q; ++i) {
        auto m = mfpt_moments(samples[i]);
        d.sites[i] = samples[i].site;
        d.tau1_hat[i] = m.tau1;
        d.tau2_hat[i] = m.tau2;
        d.se1[i] = m.se1;
        d.se2[i] = m.se2;
        d.n1 = m.n1;
        d.n2 = m.n2;
    }
    return d;
}

// Gaussian-kernel density estimate with pointwise variance
//   p_hat(x) = (1/(N h)) sum_j K((X_j - x)/h),  var_hat(x) = p_hat(x) sigma_K^2 / (N h).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> kde_estimate(const Eigen::VectorXd& states,
                                                                const Eigen::VectorXd& grid,
                                                                double h) {
    if (h <= 0.0) throw config_error("kde_estimate: bandwidth must be positive");
    const long n = states.size();
    if (n < 1) throw config_error("kde_estimate: empty sample");
    const double norm = 1.0 / std::sqrt(2.0 * M_PI);
    Eigen::VectorXd p(grid.size()), v(grid.size());
    for (long i = 0; i < grid.size(); ++i) {
        double acc = 0.0;
        for (long j = 0; j < n; ++j) acc += std::exp(-0.5 * sq((states[j] - grid[i]) / h));
        p[i] = norm * acc / (static_cast<double>(n) * h);
        v[i] = p[i] * kGaussKernelVar / (static_cast<double>(n) * h);
    }
    return {p, v};
}

// Bias-to-variance proxy N h^3; the pipeline warns when it exceeds 0.1.
inline double check_bandwidth(long n, double h) {
    if (n < 1 || h <= 0.0) throw config_error("check_bandwidth: require N >= 1, h > 0");
    return static_cast<double>(n) * h * h * h;
}

struct DensityData {
    Eigen::VectorXd grid;
    std::vector<double> times;
    Eigen::MatrixXd p_hat;    // grid.size() x times.size()
    Eigen::MatrixXd var_hat;  // same shape
    double bandwidth = 0.0;
    long n_sample = 0;
};

inline DensityData density_data(const TrajectoryEnsemble& ens, const Eigen::VectorXd& grid,
                                double h) {
    DensityData d;
    d.grid = grid;
    d.times = ens.snapshot_times;
    d.bandwidth = h;
    d.n_sample = ens.n_traj;
    const int l = static_cast<int>(ens.snapshot_times.size());
    d.p_hat.resize(grid.size(), l);
    d.var_hat.resize(grid.size(), l);
    for (int i = 0; i < l; ++i) {
        auto [p, v] = kde_estimate(ens.snapshot(i), grid, h);
        d.p_hat.col(i) = p;
        d.var_hat.col(i) = v;
    }
    const double ratio = check_bandwidth(ens.n_traj, h);
    if (ratio > 0.1)
        warn("KDE bandwidth check: N h^3 = " + std::to_string(ratio) +
             " > 0.1; estimator bias may not be negligible");
    return d;
}

// Stacked observation vector with diagonal noise covariance. Block ordering:
// moments (or snapshot times) outer, sites inner; y[b*q + i] belongs to block
// b at location i.
struct ObservationSet {
    std::string kind;  // "mfpt" or "fp"
    Eigen::VectorXd y;
    Eigen::VectorXd locations;
    std::vector<double> times;  // fp only
    int n_moments = 0;          // mfpt only
    Eigen::VectorXd gamma_diag;

    int q() const { return static_cast<int>(locations.size()); }
    int n_blocks() const { return kind == "mfpt" ? n_moments : static_cast<int>(times.size()); }
};

inline ObservationSet build_observation_set(const MomentData& d, double var_floor = 1e-8) {
    const int q = static_cast<int>(d.sites.size());
    ObservationSet obs;
    obs.kind = "mfpt";
    obs.locations = d.sites;
    obs.n_moments = 2;
    obs.y.resize(2 * q);
    obs.gamma_diag.resize(2 * q);
    obs.y.head(q) = d.tau1_hat;
    obs.y.tail(q) = d.tau2_hat;
    obs.gamma_diag.head(q) = d.se1.array().square().max(var_floor);
    obs.gamma_diag.tail(q) = d.se2.array().square().max(var_floor);
    return obs;
}

inline ObservationSet build_observation_set(const DensityData& d, double var_floor = 1e-8) {
    const int q = static_cast<int>(d.grid.size());
    const int l = static_cast<int>(d.times.size());
    ObservationSet obs;
    obs.kind = "fp";
    obs.locations = d.grid;
    obs.times = d.times;
    obs.y.resize(q * l);
    obs.gamma_diag.resize(q * l);
    for (int b = 0; b < l; ++b) {
        obs.y.segment(b * q, q) = d.p_hat.col(b);
        obs.gamma_diag.segment(b * q, q) = d.var_hat.col(b).array().max(var_floor);
    }
    return obs;
}

}  // namespace sdebayes
