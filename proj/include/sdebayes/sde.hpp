#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "sdebayes/common.hpp"
#include "sdebayes/rng.hpp"

namespace sdebayes {

// 1D autonomous Ito model dX = b(X)dt + sigma(X)dW, parameterized by the
// squared diffusion sigma^2.
struct SdeModel {
    std::function<double(double)> drift;
    std::function<double(double)> diffusion_sq;
    std::string name = "custom";
    bool allow_zero_diffusion = false;  // degenerate test models only
};

struct InitSpec {
    enum class Kind { point, gaussian };
    Kind kind = Kind::point;
    double mean = 0.0;
    double sd = 0.0;

    static InitSpec point(double x0) { return {Kind::point, x0, 0.0}; }
    static InitSpec gaussian(double mean, double sd) { return {Kind::gaussian, mean, sd}; }

    double sample(NormalStream& rng) const {
        if (kind == Kind::point) return mean;
        return mean + sd * rng.normal();
    }
};

inline double em_step(double x, const SdeModel& model, double dt, double z) {
    if (!std::isfinite(x)) throw numerical_error("em_step: non-finite state");
    const double w = model.diffusion_sq(x);
    if (w < 0.0 || (w == 0.0 && !model.allow_zero_diffusion))
        throw numerical_error("em_step: diffusion_sq(x) <= 0 at x=" + std::to_string(x));
    return x + model.drift(x) * dt + std::sqrt(w * dt) * z;
}

struct TrajectoryEnsemble {
    int n_traj = 0;
    double dt = 0.0;
    std::vector<double> snapshot_times;
    Eigen::MatrixXd states;  // n_traj x snapshot_times.size()
    std::uint64_t seed = 0;

    Eigen::VectorXd snapshot(int i) const { return states.col(i); }
};

struct ExitTimeSample {
    double site = 0.0;
    double a_left = 0.0;
    double a_right = 0.0;
    double dt = 0.0;
    long max_steps = 0;
    std::vector<double> times;  // uncensored exits only
    long censored_count = 0;
    std::uint64_t seed = 0;

    long n_traj() const { return static_cast<long>(times.size()) + censored_count; }
};

namespace detail {

inline std::vector<long> snapshot_steps(const std::vector<double>& snapshot_times, double dt,
                                        long n_steps) {
    std::vector<long> steps;
    steps.reserve(snapshot_times.size());
    for (double t : snapshot_times) {
        const double r = t / dt;
        const long k = static_cast<long>(std::llround(r));
        if (std::abs(r - k) > 1e-8 * std::max(1.0, std::abs(r)) || k < 0 || k > n_steps)
            throw config_error("snapshot time " + std::to_string(t) +
                               " is not a step multiple within the horizon");
        if (!steps.empty() && k < steps.back())
            throw config_error("snapshot times must be non-decreasing");
        steps.push_back(k);
    }
    return steps;
}

// Run fn(j) for j in [0, n) across a thread pool; fn must only write to
// slot j of preallocated storage.
inline void parallel_for(long n, const std::function<void(long)>& fn) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const long chunk = std::max<long>(1, (n + hw - 1) / hw);
    std::vector<std::future<void>> futures;
    for (long begin = 0; begin < n; begin += chunk) {
        const long end = std::min(n, begin + chunk);
        futures.push_back(std::async(std::launch::async, [begin, end, &fn] {
            for (long j = begin; j < end; ++j) fn(j);
        }));
    }
    for (auto& f : futures) f.get();
}

}  // namespace detail

inline TrajectoryEnsemble simulate_ensemble(const SdeModel& model, const InitSpec& init,
                                            long n_traj, long n_steps, double dt,
                                            const std::vector<double>& snapshot_times,
                                            std::uint64_t seed) {
    if (n_traj < 1 || n_steps < 0 || dt <= 0.0)
        throw config_error("simulate_ensemble: require n_traj >= 1, n_steps >= 0, dt > 0");
    const auto steps = detail::snapshot_steps(snapshot_times, dt, n_steps);

    TrajectoryEnsemble ens;
    ens.n_traj = static_cast<int>(n_traj);
    ens.dt = dt;
    ens.snapshot_times = snapshot_times;
    ens.seed = seed;
    ens.states.resize(n_traj, static_cast<long>(steps.size()));

    std::exception_ptr first_error;
    std::mutex error_mutex;
    detail::parallel_for(n_traj, [&](long j) {
        try {
            NormalStream rng(seed, static_cast<std::uint64_t>(j));
            double x = init.sample(rng);
            long next = 0;
            for (long k = 0; k <= n_steps; ++k) {
                while (next < static_cast<long>(steps.size()) && steps[next] == k)
                    ens.states(j, next++) = x;
                if (k == n_steps) break;
                x = em_step(x, model, dt, rng.normal());
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    });
    if (first_error) std::rethrow_exception(first_error);
    return ens;
}

inline ExitTimeSample simulate_exit_times(const SdeModel& model, double site, double a_left,
                                          double a_right, long n_traj, double dt, long max_steps,
                                          std::uint64_t seed) {
    if (!(a_left < site && site < a_right))
        throw config_error("simulate_exit_times: site must lie strictly inside the domain");
    if (n_traj < 1 || dt <= 0.0 || max_steps < 1)
        throw config_error("simulate_exit_times: require n_traj >= 1, dt > 0, max_steps >= 1");

    std::vector<double> raw(n_traj, -1.0);  // -1 marks censored
    std::exception_ptr first_error;
    std::mutex error_mutex;
    detail::parallel_for(n_traj, [&](long j) {
        try {
            NormalStream rng(seed, static_cast<std::uint64_t>(j));
            double x = site;
            for (long k = 1; k <= max_steps; ++k) {
                x = em_step(x, model, dt, rng.normal());
                if (x <= a_left || x >= a_right) {
                    raw[j] = k * dt;
                    break;
                }
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    });
    if (first_error) std::rethrow_exception(first_error);

    ExitTimeSample out;
    out.site = site;
    out.a_left = a_left;
    out.a_right = a_right;
    out.dt = dt;
    out.max_steps = max_steps;
    out.seed = seed;
    out.times.reserve(n_traj);
    for (double t : raw) {
        if (t < 0.0)
            ++out.censored_count;
        else
            out.times.push_back(t);
    }
    if (out.censored_count > 0)
        warn("exit-time sample at site " + std::to_string(site) + ": " +
             std::to_string(out.censored_count) + " of " + std::to_string(n_traj) +
             " trajectories censored at max_steps");
    return out;
}

// Fast-slow benchmark system. The slow component x couples to two fast
// variables y, z driven by independent Brownian motions:
//   dx = (nu x - (x y + y z)/(2 eps)) dt
//   dy = (nu y - 3 y/eps^2 - (2 x z - x^2)/(2 eps)) dt + (q1/eps) dV1
//   dz = (nu z - 8 z/eps^2 + 3 x y/(2 eps)) dt + (q2/eps) dV2
struct MultiscaleParams {
    double epsilon = 0.1;
    double q1 = 1.0;
    double q2 = 1.0;
    double nu = 1.0;
    double y0 = 0.0;
    double z0 = 0.0;
};

struct EffectiveCoefficients {
    double A = 0.0;
    double B = 0.0;
    double sigma_a = 0.0;
    double sigma_b = 0.0;
};

inline EffectiveCoefficients effective_coefficients(const MultiscaleParams& p) {
    EffectiveCoefficients c;
    c.A = p.nu + sq(p.q1) / 396.0 + sq(p.q2) / 352.0;
    c.B = 1.0 / 12.0;
    c.sigma_a = sq(p.q1) * sq(p.q2) / 2112.0;
    c.sigma_b = sq(p.q1) / 36.0;
    return c;
}

inline TrajectoryEnsemble simulate_multiscale(const MultiscaleParams& p, const InitSpec& init,
                                              long n_traj, long n_steps, double dt,
                                              const std::vector<double>& snapshot_times,
                                              std::uint64_t seed) {
    if (p.epsilon <= 0.0) throw config_error("simulate_multiscale: require epsilon > 0");
    if (n_traj < 1 || n_steps < 0 || dt <= 0.0)
        throw config_error("simulate_multiscale: require n_traj >= 1, n_steps >= 0, dt > 0");
    if (dt > sq(p.epsilon) / 10.0)
        warn("multiscale step dt=" + std::to_string(dt) + " is large relative to epsilon^2=" +
             std::to_string(sq(p.epsilon)) + "; fast dynamics may be under-resolved");
    const auto steps = detail::snapshot_steps(snapshot_times, dt, n_steps);

    TrajectoryEnsemble ens;
    ens.n_traj = static_cast<int>(n_traj);
    ens.dt = dt;
    ens.snapshot_times = snapshot_times;
    ens.seed = seed;
    ens.states.resize(n_traj, static_cast<long>(steps.size()));

    const double eps = p.epsilon;
    const double sdt = std::sqrt(dt);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    detail::parallel_for(n_traj, [&](long j) {
        try {
            NormalStream rng(seed, static_cast<std::uint64_t>(j));
            double x = init.sample(rng);
            double y = p.y0, z = p.z0;
            long next = 0;
            for (long k = 0; k <= n_steps; ++k) {
                while (next < static_cast<long>(steps.size()) && steps[next] == k)
                    ens.states(j, next++) = x;
                if (k == n_steps) break;
                if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
                    throw numerical_error("simulate_multiscale: state diverged");
                const double dx = (p.nu * x - (x * y + y * z) / (2.0 * eps)) * dt;
                const double dy =
                    (p.nu * y - 3.0 * y / sq(eps) - (2.0 * x * z - sq(x)) / (2.0 * eps)) * dt +
                    (p.q1 / eps) * sdt * rng.normal();
                const double dz = (p.nu * z - 8.0 * z / sq(eps) + 3.0 * x * y / (2.0 * eps)) * dt +
                                  (p.q2 / eps) * sdt * rng.normal();
                x += dx;
                y += dy;
                z += dz;
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    });
    if (first_error) std::rethrow_exception(first_error);
    return ens;
}

// Built-in models.
inline SdeModel benchmark_model() {
    SdeModel m;
    m.name = "benchmark";
    m.drift = [](double x) { return -2.0 * x * x * x + 3.0 * x; };
    m.diffusion_sq = [](double x) { return x * x + 2.0; };
    return m;
}

inline SdeModel ou_model(double theta = 1.0, double sigma_sq = 1.0) {
    SdeModel m;
    m.name = "ou";
    m.drift = [theta](double x) { return -theta * x; };
    m.diffusion_sq = [sigma_sq](double) { return sigma_sq; };
    return m;
}

inline SdeModel brownian_model(double sigma_sq = 2.0) {
    SdeModel m;
    m.name = "brownian";
    m.drift = [](double) { return 0.0; };
    m.diffusion_sq = [sigma_sq](double) { return sigma_sq; };
    return m;
}

// Effective coarse-grain model dX = (A X - B X^3)dt + sqrt(sig_a + sig_b X^2) dW.
inline SdeModel effective_model(const MultiscaleParams& p) {
    const auto c = effective_coefficients(p);
    SdeModel m;
    m.name = "effective";
    m.drift = [c](double x) { return c.A * x - c.B * x * x * x; };
    m.diffusion_sq = [c](double x) { return c.sigma_a + c.sigma_b * x * x; };
    return m;
}

}  // namespace sdebayes
