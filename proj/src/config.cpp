#include "cbf_shield/config.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cbf {

namespace {

std::string trim(const std::string& s) {
    const size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

const std::array<const char*, 37> kKnownKeys = {
    "scenario.kind",    "scenario.barrier", "seed",
    "obstacle.center",  "obstacle.rho_t",   "obstacle.rho_s",
    "cloud.source",     "cloud.file",       "cloud.n",
    "init.r",           "init.v",
    "path.auto",        "path.waypoints",
    "gains.k1",         "gains.k2",         "gains.k3",         "gains.slack_penalty",
    "inputs.shape",     "inputs.u_max",
    "gravity.model",    "gravity.mu",       "gravity.center",
    "sim.duration",     "sim.dt_ctrl",      "sim.substeps",     "sim.on_infeasible",
    "sim.relax_factor",
    "flow.dt",          "flow.t_prop",      "flow.peak_window", "flow.multi_max_tol",
    "flow.a_lb",        "flow.theta",
    "poly.a_max",       "poly.margin",      "poly.samples",
    "qp.alpha_scale",
};

bool known_key(const std::string& k) {
    if (std::find_if(kKnownKeys.begin(), kKnownKeys.end(),
                     [&](const char* kk) { return k == kk; }) != kKnownKeys.end())
        return true;
    return k == "prune.enabled" || k == "prune.horizon" || k == "prune.margin";
}

double parse_double(const FlatConfig& cfg, const std::string& key) {
    const std::string& v = cfg.get(key);
    size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
    if (trim(v.substr(pos)).size() != 0)
        throw ConfigError("config key '" + key + "': trailing text after number in '" + v + "'");
    return out;
}

long parse_int(const FlatConfig& cfg, const std::string& key) {
    const double d = parse_double(cfg, key);
    const long l = static_cast<long>(d);
    if (static_cast<double>(l) != d)
        throw ConfigError("config key '" + key + "': expected an integer");
    return l;
}

bool parse_bool(const FlatConfig& cfg, const std::string& key) {
    const std::string v = trim(cfg.get(key));
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false");
}

Vec3 parse_vec3(const FlatConfig& cfg, const std::string& key) {
    std::istringstream ss(cfg.get(key));
    Vec3 v;
    if (!(ss >> v(0) >> v(1) >> v(2)))
        throw ConfigError("config key '" + key + "': expected three numbers");
    std::string rest;
    if (ss >> rest) throw ConfigError("config key '" + key + "': trailing text");
    return v;
}

std::vector<Vec3> parse_waypoints(const std::string& text, const std::string& key) {
    std::vector<Vec3> pts;
    std::string chunk;
    std::istringstream stream(text);
    while (std::getline(stream, chunk, ';')) {
        if (trim(chunk).empty()) continue;
        std::istringstream ss(chunk);
        Vec3 v;
        if (!(ss >> v(0) >> v(1) >> v(2)))
            throw ConfigError("config key '" + key + "': waypoint needs three numbers");
        pts.push_back(v);
    }
    return pts;
}

}  // namespace

const std::string& FlatConfig::get(const std::string& key) const {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
}

FlatConfig FlatConfig::parse_text(const std::string& text, const std::string& origin) {
    FlatConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!known_key(key))
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key +
                              "'");
        cfg.kv[key] = value;
    }
    return cfg;
}

FlatConfig FlatConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str(), path);
}

void FlatConfig::apply_override(const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    const std::string key = trim(assignment.substr(0, eq));
    if (!known_key(key)) throw ConfigError("override: unknown key '" + key + "'");
    kv[key] = trim(assignment.substr(eq + 1));
}

std::string FlatConfig::serialize() const {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

FlatConfig default_config(const std::string& kind) {
    if (kind != "sphere" && kind != "pointcloud")
        throw ConfigError("unknown scenario kind '" + kind + "'");
    FlatConfig cfg;
    auto& kv = cfg.kv;
    kv["scenario.kind"] = kind;
    kv["scenario.barrier"] = "hprime";
    kv["seed"] = "1";
    kv["obstacle.center"] = "0 0 0";
    kv["obstacle.rho_t"] = "5";
    kv["obstacle.rho_s"] = "1";
    kv["cloud.source"] = "synthetic";
    kv["cloud.file"] = "";
    kv["cloud.n"] = "2000";
    kv["init.r"] = kind == "sphere" ? "12 0 0" : "14 0 0";
    kv["init.v"] = "0 0 0";
    kv["path.auto"] = "circle";
    kv["path.waypoints"] = "";
    kv["gains.k1"] = "-0.3";
    kv["gains.k2"] = "2";
    kv["gains.k3"] = "0.5";
    kv["gains.slack_penalty"] = "100";
    kv["inputs.shape"] = "box";
    kv["inputs.u_max"] = "0.2";
    kv["gravity.model"] = "none";
    kv["gravity.mu"] = "0";
    kv["gravity.center"] = "0 0 0";
    kv["sim.duration"] = kind == "sphere" ? "60" : "80";
    kv["sim.dt_ctrl"] = "0.1";
    kv["sim.substeps"] = "10";
    kv["sim.on_infeasible"] = "auto";
    kv["sim.relax_factor"] = "10";
    kv["flow.dt"] = "0.01";
    kv["flow.t_prop"] = "0";
    kv["flow.peak_window"] = "3";
    kv["flow.multi_max_tol"] = "0.02";
    kv["flow.a_lb"] = "0";
    kv["flow.theta"] = "auto";
    kv["poly.a_max"] = "0";
    kv["poly.margin"] = "0.01";
    kv["poly.samples"] = "2048";
    kv["qp.alpha_scale"] = "1";
    kv["prune.enabled"] = "true";
    kv["prune.horizon"] = "5";
    kv["prune.margin"] = "0.5";
    return cfg;
}

ScenarioConfig build_scenario(const FlatConfig& cfg) {
    for (const auto& [k, v] : cfg.kv) {
        (void)v;
        if (!known_key(k)) throw ConfigError("unknown config key '" + k + "'");
    }

    ScenarioConfig sc;
    const std::string kind = trim(cfg.get("scenario.kind"));
    const std::string barrier = trim(cfg.get("scenario.barrier"));
    if (barrier == "h_flow")
        sc.barrier = BarrierKind::FlowH;
    else if (barrier == "hprime")
        sc.barrier = BarrierKind::PolyPrime;
    else if (barrier == "ho")
        sc.barrier = BarrierKind::Arctan;
    else
        throw ConfigError("config key 'scenario.barrier': expected h_flow|hprime|ho");

    sc.seed = static_cast<std::uint64_t>(parse_int(cfg, "seed"));

    const double rho_s = parse_double(cfg, "obstacle.rho_s");
    if (kind == "sphere") {
        SphereObstacle obs;
        obs.center = parse_vec3(cfg, "obstacle.center");
        obs.rho_t = parse_double(cfg, "obstacle.rho_t");
        obs.rho_s = rho_s;
        if (obs.rho_a() <= 0.0) throw ConfigError("obstacle radii must satisfy rho_t + rho_s > 0");
        sc.sphere = obs;
    } else if (kind == "pointcloud") {
        PointCloudObstacle cloud;
        cloud.rho_s = rho_s;
        if (cloud.rho_s <= 0.0) throw ConfigError("config key 'obstacle.rho_s': must be positive");
        const std::string source = trim(cfg.get("cloud.source"));
        if (source == "synthetic") {
            cloud.points = make_peanut_cloud(static_cast<int>(parse_int(cfg, "cloud.n")), sc.seed);
        } else if (source == "file") {
            cloud.points = load_pointcloud(trim(cfg.get("cloud.file")));
            if (cloud.points.empty()) throw ConfigError("point cloud file has no points");
        } else {
            throw ConfigError("config key 'cloud.source': expected synthetic|file");
        }
        sc.cloud = std::move(cloud);
    } else {
        throw ConfigError("config key 'scenario.kind': expected sphere|pointcloud");
    }

    sc.k1 = parse_double(cfg, "gains.k1");
    sc.k2 = parse_double(cfg, "gains.k2");
    sc.k3 = parse_double(cfg, "gains.k3");
    sc.slack_penalty = parse_double(cfg, "gains.slack_penalty");

    const std::string shape = trim(cfg.get("inputs.shape"));
    if (shape == "box")
        sc.inputs.shape = InputShape::Box;
    else if (shape == "ball")
        sc.inputs.shape = InputShape::Ball;
    else
        throw ConfigError("config key 'inputs.shape': expected box|ball");
    sc.inputs.u_max = parse_double(cfg, "inputs.u_max");
    if (sc.inputs.u_max < 0.0) throw ConfigError("config key 'inputs.u_max': must be >= 0");

    const std::string gmodel = trim(cfg.get("gravity.model"));
    if (gmodel == "none") {
        sc.gravity.kind = GravityKind::None;
    } else if (gmodel == "pointmass") {
        sc.gravity.kind = GravityKind::PointMass;
        sc.gravity.mu = parse_double(cfg, "gravity.mu");
        sc.gravity.center = parse_vec3(cfg, "gravity.center");
        if (sc.gravity.mu < 0.0) throw ConfigError("config key 'gravity.mu': must be >= 0");
    } else {
        throw ConfigError("config key 'gravity.model': expected none|pointmass");
    }

    sc.sim.duration = parse_double(cfg, "sim.duration");
    sc.sim.dt_ctrl = parse_double(cfg, "sim.dt_ctrl");
    sc.sim.substeps = static_cast<int>(parse_int(cfg, "sim.substeps"));
    if (sc.sim.duration <= 0.0) throw ConfigError("config key 'sim.duration': must be positive");
    if (sc.sim.dt_ctrl <= 0.0) throw ConfigError("config key 'sim.dt_ctrl': must be positive");
    if (sc.sim.substeps < 1) throw ConfigError("config key 'sim.substeps': must be >= 1");
    const std::string onf = trim(cfg.get("sim.on_infeasible"));
    if (onf == "auto")
        sc.sim.on_infeasible = InfeasiblePolicy::Auto;
    else if (onf == "halt")
        sc.sim.on_infeasible = InfeasiblePolicy::Halt;
    else if (onf == "fallback")
        sc.sim.on_infeasible = InfeasiblePolicy::FallbackEvading;
    else if (onf == "relax")
        sc.sim.on_infeasible = InfeasiblePolicy::RelaxBounds;
    else
        throw ConfigError("config key 'sim.on_infeasible': expected auto|halt|fallback|relax");
    sc.sim.relax_factor = parse_double(cfg, "sim.relax_factor");

    sc.flow.dt = parse_double(cfg, "flow.dt");
    sc.flow.t_prop = parse_double(cfg, "flow.t_prop");
    sc.flow.peak_window = static_cast<int>(parse_int(cfg, "flow.peak_window"));
    sc.flow.multi_max_tol = parse_double(cfg, "flow.multi_max_tol");
    sc.flow.a_lb = parse_double(cfg, "flow.a_lb");
    const std::string theta = trim(cfg.get("flow.theta"));
    if (theta == "auto")
        sc.flow.theta = ThetaMode::Auto;
    else if (theta == "ode")
        sc.flow.theta = ThetaMode::Ode;
    else if (theta == "block")
        sc.flow.theta = ThetaMode::Block;
    else
        throw ConfigError("config key 'flow.theta': expected auto|ode|block");

    sc.poly.a_max_override = parse_double(cfg, "poly.a_max");
    sc.poly.margin = parse_double(cfg, "poly.margin");
    sc.poly.samples = static_cast<int>(parse_int(cfg, "poly.samples"));

    sc.alpha_scale = parse_double(cfg, "qp.alpha_scale");
    if (sc.alpha_scale <= 0.0) throw ConfigError("config key 'qp.alpha_scale': must be positive");

    sc.prune.enabled = parse_bool(cfg, "prune.enabled");
    sc.prune.horizon = parse_double(cfg, "prune.horizon");
    sc.prune.margin = parse_double(cfg, "prune.margin");

    sc.x0.r = parse_vec3(cfg, "init.r");
    sc.x0.v = parse_vec3(cfg, "init.v");

    const std::vector<Vec3> wps = parse_waypoints(cfg.get("path.waypoints"), "path.waypoints");
    if (!wps.empty()) {
        sc.path.waypoints = wps;
    } else {
        const std::string pauto = trim(cfg.get("path.auto"));
        if (pauto == "circle") {
            if (sc.sphere) {
                sc.path = default_surface_path(sc.sphere->center, sc.sphere->rho_t);
            } else {
                Vec3 centroid = Vec3::Zero();
                for (const Vec3& p : sc.cloud->points) centroid += p;
                centroid /= static_cast<double>(sc.cloud->points.size());
                double r_b = 0.0;
                for (const Vec3& p : sc.cloud->points)
                    r_b = std::max(r_b, (p - centroid).norm());
                sc.path = default_surface_path(centroid, 0.85 * r_b);
            }
        } else if (pauto == "none") {
            throw ConfigError("path.waypoints is empty and path.auto is none");
        } else {
            throw ConfigError("config key 'path.auto': expected circle|none");
        }
    }
    return sc;
}

}  // namespace cbf
