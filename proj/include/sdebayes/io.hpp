#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdebayes/common.hpp"
#include "sdebayes/data_prep.hpp"
#include "sdebayes/sde.hpp"

namespace sdebayes::io {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// shortest representation that round-trips a double exactly
inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt(long v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw data_error("short write: " + path.string());
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw missing_artifact_error("missing file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void save_json(const fs::path& path, const ordered_json& j) {
    write_text(path, j.dump(2) + "\n");
}

inline ordered_json load_json(const fs::path& path) {
    const std::string text = read_text(path);
    ordered_json j = ordered_json::parse(text, nullptr, false);
    if (j.is_discarded()) throw data_error("malformed JSON: " + path.string());
    return j;
}

struct CsvTable {
    std::vector<std::string> header;
    Eigen::MatrixXd rows;  // numeric cells only

    int col(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw data_error("CSV column not found: " + name);
    }
};

inline void write_csv(const fs::path& path, const std::vector<std::string>& header,
                      const Eigen::MatrixXd& rows) {
    std::string text;
    for (std::size_t i = 0; i < header.size(); ++i)
        text += (i ? "," : "") + header[i];
    text += "\n";
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        for (Eigen::Index c = 0; c < rows.cols(); ++c)
            text += (c ? "," : "") + fmt(rows(r, c));
        text += "\n";
    }
    write_text(path, text);
}

inline CsvTable read_csv(const fs::path& path) {
    const std::string text = read_text(path);
    CsvTable table;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw data_error("empty CSV: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) table.header.push_back(cell);
    if (table.header.empty()) throw data_error("CSV header missing: " + path.string());

    std::vector<double> values;
    Eigen::Index n_rows = 0;
    const Eigen::Index n_cols = static_cast<Eigen::Index>(table.header.size());
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        Eigen::Index c = 0;
        while (std::getline(ls, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0')
                throw data_error("non-numeric CSV cell '" + cell + "' in " + path.string());
            values.push_back(v);
            ++c;
        }
        if (c != n_cols)
            throw data_error("ragged CSV row in " + path.string());
        ++n_rows;
    }
    table.rows.resize(n_rows, n_cols);
    for (Eigen::Index r = 0; r < n_rows; ++r)
        for (Eigen::Index c = 0; c < n_cols; ++c)
            table.rows(r, c) = values[static_cast<std::size_t>(r * n_cols + c)];
    return table;
}

// --- trajectory ensembles: one row per retained snapshot --------------------

inline void write_trajectories(const fs::path& path, const TrajectoryEnsemble& ens) {
    const int l = static_cast<int>(ens.snapshot_times.size());
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(ens.n_traj) * l, 3);
    Eigen::Index r = 0;
    for (int j = 0; j < ens.n_traj; ++j)
        for (int i = 0; i < l; ++i) {
            rows(r, 0) = j;
            rows(r, 1) = ens.snapshot_times[i];
            rows(r, 2) = ens.states(j, i);
            ++r;
        }
    write_csv(path, {"traj_id", "time", "x"}, rows);
}

inline TrajectoryEnsemble read_trajectories(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const int ci = t.col("traj_id"), ct = t.col("time"), cx = t.col("x");
    TrajectoryEnsemble ens;
    if (t.rows.rows() == 0) throw data_error("no trajectory rows in " + path.string());
    for (Eigen::Index r = 0; r < t.rows.rows(); ++r) {
        const double time = t.rows(r, ct);
        if (ens.snapshot_times.empty() || time > ens.snapshot_times.back() + 1e-15)
            ens.snapshot_times.push_back(time);
        else
            break;  // times repeat once the next trajectory starts
    }
    const int l = static_cast<int>(ens.snapshot_times.size());
    if (t.rows.rows() % l != 0)
        throw data_error("trajectory rows not a multiple of snapshot count in " + path.string());
    ens.n_traj = static_cast<int>(t.rows.rows() / l);
    ens.states.resize(ens.n_traj, l);
    for (Eigen::Index r = 0; r < t.rows.rows(); ++r) {
        const int j = static_cast<int>(t.rows(r, ci));
        const int i = static_cast<int>(r % l);
        if (j < 0 || j >= ens.n_traj || std::abs(t.rows(r, ct) - ens.snapshot_times[i]) > 1e-12)
            throw data_error("inconsistent trajectory layout in " + path.string());
        ens.states(j, i) = t.rows(r, cx);
    }
    return ens;
}

// --- exit times: one row per trajectory; censored rows carry the horizon ----

inline void write_exit_times(const fs::path& path, const std::vector<ExitTimeSample>& samples) {
    Eigen::Index n_rows = 0;
    for (const auto& s : samples) n_rows += static_cast<Eigen::Index>(s.n_traj());
    Eigen::MatrixXd rows(n_rows, 3);
    Eigen::Index r = 0;
    for (const auto& s : samples) {
        for (double tau : s.times) {
            rows(r, 0) = s.site;
            rows(r, 1) = tau;
            rows(r, 2) = 0.0;
            ++r;
        }
        for (long c = 0; c < s.censored_count; ++c) {
            rows(r, 0) = s.site;
            rows(r, 1) = s.dt * static_cast<double>(s.max_steps);
            rows(r, 2) = 1.0;
            ++r;
        }
    }
    write_csv(path, {"site", "tau", "censored"}, rows);
}

inline std::vector<ExitTimeSample> read_exit_times(const fs::path& path) {
    const CsvTable t = read_csv(path);
    const int cs = t.col("site"), ct = t.col("tau"), cc = t.col("censored");
    std::vector<ExitTimeSample> samples;
    for (Eigen::Index r = 0; r < t.rows.rows(); ++r) {
        const double site = t.rows(r, cs);
        if (samples.empty() || samples.back().site != site) {
            for (const auto& s : samples)
                if (s.site == site)
                    throw data_error("exit-time rows for one site are not contiguous in " +
                                     path.string());
            samples.push_back({});
            samples.back().site = site;
        }
        if (t.rows(r, cc) != 0.0)
            ++samples.back().censored_count;
        else
            samples.back().times.push_back(t.rows(r, ct));
    }
    if (samples.empty()) throw data_error("no exit-time rows in " + path.string());
    return samples;
}

// --- observation sets --------------------------------------------------------

inline ordered_json to_json(const Eigen::VectorXd& v) {
    ordered_json arr = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

inline Eigen::VectorXd vector_from_json(const ordered_json& arr, const std::string& what) {
    if (!arr.is_array()) throw data_error(what + " must be an array");
    Eigen::VectorXd v(arr.size());
    Eigen::Index i = 0;
    for (const auto& x : arr) {
        if (!x.is_number()) throw data_error(what + " must contain only numbers");
        v[i++] = x.get<double>();
    }
    return v;
}

inline void write_observations(const fs::path& path, const ObservationSet& obs,
                               const ordered_json& metadata = ordered_json::object()) {
    ordered_json j;
    j["kind"] = obs.kind;
    j["y"] = to_json(obs.y);
    j["locations"] = to_json(obs.locations);
    j["times"] = obs.times;
    j["n_moments"] = obs.n_moments;
    j["gamma_diag"] = to_json(obs.gamma_diag);
    j["metadata"] = metadata;
    save_json(path, j);
}

inline ObservationSet read_observations(const fs::path& path) {
    const ordered_json j = load_json(path);
    for (const char* key : {"kind", "y", "locations", "times", "n_moments", "gamma_diag"})
        if (!j.contains(key))
            throw data_error("observation file missing key '" + std::string(key) + "': " +
                             path.string());
    ObservationSet obs;
    obs.kind = j["kind"].get<std::string>();
    obs.y = vector_from_json(j["y"], "y");
    obs.locations = vector_from_json(j["locations"], "locations");
    obs.times = j["times"].get<std::vector<double>>();
    obs.n_moments = j["n_moments"].get<int>();
    obs.gamma_diag = vector_from_json(j["gamma_diag"], "gamma_diag");
    return obs;
}

}  // namespace sdebayes::io
