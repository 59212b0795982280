#include "cbf_shield/run_io.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "json.hpp"

namespace cbf {

std::string trajectory_csv(const TrajectoryLog& log) {
    std::string out =
        "t,rx,ry,rz,vx,vy,vz,ux,uy,uz,h_max,H_max,qp_status,n_active_rows\n";
    for (const StepRecord& rec : log.steps) {
        out += format_g17(rec.t);
        for (int i = 0; i < 3; ++i) out += "," + format_g17(rec.x.r(i));
        for (int i = 0; i < 3; ++i) out += "," + format_g17(rec.x.v(i));
        for (int i = 0; i < 3; ++i) out += "," + format_g17(rec.u(i));
        out += "," + format_g17(rec.h_max);
        out += "," + format_g17(rec.barrier_max);
        out += std::string(",") + to_string(rec.qp_status);
        out += "," + std::to_string(rec.n_active_rows);
        out += "\n";
    }
    return out;
}

std::string summary_json(const SafetySummary& s, double a_max_used, bool initial_inside) {
    nlohmann::json j;
    j["max_h"] = s.max_h;
    j["max_barrier"] = s.max_barrier;
    j["max_u_norm"] = s.max_u_norm;
    j["infeasible_steps"] = s.infeasible_steps;
    j["min_distance"] = s.min_distance;
    j["steps"] = s.steps;
    j["completed_duration"] = s.completed_duration;
    j["halted_infeasible"] = s.halted_infeasible;
    j["a_max_used"] = a_max_used;
    j["initial_inside"] = initial_inside;
    return j.dump(2) + "\n";
}

std::string manifest_json(const ManifestInfo& info) {
    nlohmann::json j;
    j["tool"] = "cbf-shield";
    j["version"] = info.tool_version;
    j["seed"] = info.seed;
    j["start_time"] = info.start_time;
    j["end_time"] = info.end_time;
    nlohmann::json cfg = nlohmann::json::object();
    for (const auto& [k, v] : info.effective_config.kv) cfg[k] = v;
    j["config"] = cfg;
    j["outputs"]["trajectory_csv"] = info.trajectory_path;
    j["outputs"]["summary_json"] = info.summary_path;
    return j.dump(2) + "\n";
}

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path);
    out << content;
    if (!out) throw Error("write failed: " + path);
}

}  // namespace cbf
