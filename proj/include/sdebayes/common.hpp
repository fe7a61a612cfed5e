#pragma once

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdebayes {

// Bad user input: malformed config, off-grid times, invalid counts.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Data that cannot be processed (all-censored site, odd sample split, ...).
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

// Numerical breakdown: non-finite state, singular system, SPD violation.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

// Required upstream artifact (file) is missing.
class missing_artifact_error : public std::runtime_error {
public:
    explicit missing_artifact_error(const std::string& what) : std::runtime_error(what) {}
};

inline void warn(const std::string& msg) { std::cerr << "[warn] " << msg << "\n"; }

inline std::vector<double> linspace(double first, double last, int count) {
    if (count < 1) throw config_error("linspace: count must be >= 1");
    std::vector<double> out(static_cast<size_t>(count));
    if (count == 1) {
        out[0] = first;
        return out;
    }
    const double step = (last - first) / (count - 1);
    for (int i = 0; i < count; ++i) out[static_cast<size_t>(i)] = first + step * i;
    out.back() = last;
    return out;
}

inline double sq(double x) { return x * x; }

}  // namespace sdebayes
