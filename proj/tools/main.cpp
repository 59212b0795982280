// cbf-shield: configure and run the obstacle-avoidance safety-filter
// simulator, check initial-state admissibility, and sweep parameters.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cbf_shield/config.hpp"
#include "cbf_shield/run_io.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::string scenario;
    std::string barrier;
    long long seed = -1;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key=value config file");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--scenario", args.scenario, "scenario name: sphere|pointcloud");
    cmd->add_option("--barrier", args.barrier, "barrier choice: h_flow|hprime|ho");
    cmd->add_option("--seed", args.seed, "run seed");
    cmd->add_option("--set", args.overrides, "config override key=value (repeatable)");
}

cbf::FlatConfig effective_config(const CommonArgs& args) {
    cbf::FlatConfig file_cfg;
    if (!args.config_path.empty()) file_cfg = cbf::FlatConfig::parse_file(args.config_path);

    std::string kind = "sphere";
    if (file_cfg.has("scenario.kind")) kind = file_cfg.get("scenario.kind");
    if (!args.scenario.empty()) kind = args.scenario;

    cbf::FlatConfig cfg = cbf::default_config(kind);
    cfg.merge_from(file_cfg);
    cfg.set("scenario.kind", kind);
    if (!args.barrier.empty()) cfg.set("scenario.barrier", args.barrier);
    if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
    for (const std::string& ov : args.overrides) cfg.apply_override(ov);
    return cfg;
}

std::string resolve_out_dir(const CommonArgs& args) {
    if (const char* env = std::getenv("CBF_SHIELD_OUT"); env && *env) return env;
    return args.out_dir;
}

int cmd_run(const CommonArgs& args) {
    const cbf::FlatConfig cfg = effective_config(args);
    const cbf::ScenarioConfig sc = cbf::build_scenario(cfg);

    const std::string out_dir = resolve_out_dir(args);
    std::filesystem::create_directories(out_dir);

    cbf::ManifestInfo manifest;
    manifest.effective_config = cfg;
    manifest.seed = sc.seed;
    manifest.tool_version = kVersion;
    manifest.start_time = cbf::iso8601_now();
    manifest.trajectory_path = out_dir + "/trajectory.csv";
    manifest.summary_path = out_dir + "/summary.json";

    const cbf::TrajectoryLog log =
        sc.sphere ? cbf::run_scenario(sc) : cbf::run_pointcloud_scenario(sc);
    if (!log.initial_inside)
        std::cerr << "warning: initial state lies outside the barrier sublevel set\n";
    const cbf::SafetySummary summary = cbf::safety_report(log, sc.inputs);
    manifest.end_time = cbf::iso8601_now();

    cbf::write_file(manifest.trajectory_path, cbf::trajectory_csv(log));
    cbf::write_file(manifest.summary_path,
                    cbf::summary_json(summary, log.a_max_used, log.initial_inside));
    cbf::write_file(out_dir + "/manifest.json", cbf::manifest_json(manifest));
    cbf::write_file(out_dir + "/effective.cfg", cfg.serialize());

    std::cout << "steps=" << summary.steps << " max_h=" << cbf::format_g17(summary.max_h)
              << " max_u=" << cbf::format_g17(summary.max_u_norm)
              << " infeasible_steps=" << summary.infeasible_steps
              << (log.halted_infeasible ? " halted=infeasible" : "") << "\n";
    return log.halted_infeasible ? 2 : 0;
}

int cmd_check(const CommonArgs& args) {
    const cbf::FlatConfig cfg = effective_config(args);
    const cbf::ScenarioConfig sc = cbf::build_scenario(cfg);

    double value = 0.0;
    switch (sc.barrier) {
        case cbf::BarrierKind::PolyPrime: {
            const double a_max = cbf::scenario_a_max(sc);
            std::cout << "a_max = " << cbf::format_g17(a_max) << "\n";
            if (sc.sphere) {
                const cbf::SystemModel model{sc.gravity};
                const cbf::SphereConstraint c{sc.sphere->center, sc.sphere->rho_a()};
                const auto eval =
                    cbf::eval_poly_barrier(cbf::make_sphere_poly_barrier(model, c, a_max), sc.x0);
                value = eval.value;
            } else {
                value = -std::numeric_limits<double>::infinity();
                for (const cbf::Vec3& p : sc.cloud->points) {
                    const double dist = (sc.x0.r - p).norm();
                    const double hdot =
                        -(sc.x0.r - p).dot(sc.x0.v) / std::max(dist, 1e-12);
                    value = std::max(value, cbf::poly_barrier_r2(sc.cloud->rho_s - dist, hdot,
                                                                 a_max));
                }
            }
            break;
        }
        case cbf::BarrierKind::FlowH: {
            if (!sc.sphere) throw cbf::ConfigError("check with h_flow requires a sphere scenario");
            const cbf::SystemModel model{sc.gravity};
            const cbf::SphereConstraint c{sc.sphere->center, sc.sphere->rho_a()};
            cbf::FlowBarrierConfig fc = sc.flow;
            if (fc.t_prop <= 0.0 && fc.a_lb <= 0.0)
                fc.a_lb = sc.inputs.u_max - sc.gravity.bound(c.rho_a);
            const cbf::FlowBarrier fb(model, c, sc.inputs, fc);
            value = fb.value(sc.x0);
            break;
        }
        case cbf::BarrierKind::Arctan: {
            if (!sc.sphere) throw cbf::ConfigError("check with ho requires a sphere scenario");
            const cbf::SystemModel model{sc.gravity};
            const cbf::SphereConstraint c{sc.sphere->center, sc.sphere->rho_a()};
            value = cbf::arctan_barrier_eval(model, c, sc.x0).value;
            break;
        }
    }
    const bool inside = value <= 0.0;
    std::cout << "barrier(x0) = " << cbf::format_g17(value) << "\n";
    std::cout << (inside ? "initial state is inside the safe sublevel set\n"
                         : "initial state is OUTSIDE the safe sublevel set\n");
    return inside ? 0 : 3;
}

int cmd_sweep(const CommonArgs& args, const std::string& param,
              const std::vector<double>& values) {
    static const std::map<std::string, std::string> kParamKeys = {
        {"u_max", "inputs.u_max"},
        {"alpha_scale", "qp.alpha_scale"},
        {"dt_ctrl", "sim.dt_ctrl"},
        {"a_lb", "flow.a_lb"},
    };
    const auto it = kParamKeys.find(param);
    if (it == kParamKeys.end())
        throw cbf::ConfigError("sweep parameter must be one of u_max|alpha_scale|dt_ctrl|a_lb");

    const std::string out_dir = resolve_out_dir(args);
    std::filesystem::create_directories(out_dir);

    std::string csv =
        "param,value,status,max_h,max_barrier,max_u_norm,infeasible_steps,min_distance\n";
    for (const double v : values) {
        cbf::FlatConfig cfg = effective_config(args);
        cfg.set(it->second, cbf::format_g17(v));
        std::string status = "ok";
        cbf::SafetySummary s{};
        try {
            const cbf::ScenarioConfig sc = cbf::build_scenario(cfg);
            const cbf::TrajectoryLog log =
                sc.sphere ? cbf::run_scenario(sc) : cbf::run_pointcloud_scenario(sc);
            s = cbf::safety_report(log, sc.inputs);
            if (log.halted_infeasible) status = "halted_infeasible";
        } catch (const cbf::NoValidAmaxError&) {
            status = "error:no_valid_a_max";
        } catch (const cbf::Error& e) {
            status = std::string("error:") + e.what();
        }
        csv += param + "," + cbf::format_g17(v) + "," + status;
        if (status == "ok" || status == "halted_infeasible") {
            csv += "," + cbf::format_g17(s.max_h) + "," + cbf::format_g17(s.max_barrier) + "," +
                   cbf::format_g17(s.max_u_norm) + "," + std::to_string(s.infeasible_steps) +
                   "," + cbf::format_g17(s.min_distance);
        } else {
            csv += ",,,,,";
        }
        csv += "\n";
    }
    cbf::write_file(out_dir + "/sweep.csv", csv);
    std::cout << csv;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"input-constrained barrier safety-filter simulator"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    CommonArgs run_args, check_args, sweep_args;
    CLI::App* run = app.add_subcommand("run", "run a scenario and write trajectory outputs");
    add_common(run, run_args);
    CLI::App* check = app.add_subcommand("check", "validate a config and classify x0");
    add_common(check, check_args);
    CLI::App* sweep = app.add_subcommand("sweep", "run a scenario across parameter values");
    add_common(sweep, sweep_args);
    std::string sweep_param;
    std::vector<double> sweep_values;
    sweep->add_option("--param", sweep_param, "u_max|alpha_scale|dt_ctrl|a_lb")->required();
    sweep->add_option("--values", sweep_values, "parameter values")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(run_args);
        if (check->parsed()) return cmd_check(check_args);
        if (sweep->parsed()) return cmd_sweep(sweep_args, sweep_param, sweep_values);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
