#pragma once

// Deterministic run outputs: trajectory CSV, summary JSON, run manifest.

#include <string>

#include "cbf_shield/config.hpp"
#include "cbf_shield/scenarios.hpp"

namespace cbf {

// Columns, in order: t, rx, ry, rz, vx, vy, vz, ux, uy, uz, h_max, H_max,
// qp_status, n_active_rows. Floats carry 17 significant digits.
std::string trajectory_csv(const TrajectoryLog& log);

std::string summary_json(const SafetySummary& summary, double a_max_used, bool initial_inside);

struct ManifestInfo {
    FlatConfig effective_config;
    std::uint64_t seed = 0;
    std::string tool_version;
    std::string start_time;
    std::string end_time;
    std::string trajectory_path;
    std::string summary_path;
};

std::string manifest_json(const ManifestInfo& info);

std::string iso8601_now();

void write_file(const std::string& path, const std::string& content);

}  // namespace cbf
