#include "cbf_shield/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace cbf {

Vec3 PathSpec::at(double s) const {
    if (waypoints.empty()) throw ConfigError("path has no waypoints");
    if (waypoints.size() == 1) return waypoints.front();
    const double sc = std::clamp(s, 0.0, 1.0);
    const double pos = sc * static_cast<double>(waypoints.size() - 1);
    const size_t i = std::min(static_cast<size_t>(pos), waypoints.size() - 2);
    const double frac = pos - static_cast<double>(i);
    return (1.0 - frac) * waypoints[i] + frac * waypoints[i + 1];
}

PathSpec default_surface_path(const Vec3& center, double radius, int n_waypoints) {
    PathSpec path;
    path.waypoints.reserve(n_waypoints);
    for (int j = 0; j < n_waypoints; ++j) {
        const double phi = 2.0 * M_PI * j / (n_waypoints - 1);
        Vec3 dir(std::cos(phi), std::sin(phi), 0.25 * std::sin(2.0 * phi));
        path.waypoints.push_back(center + radius * dir.normalized());
    }
    return path;
}

std::vector<State> sample_shell_states(const Vec3& center, double r_lo, double r_hi,
                                       double v_max, int count, std::uint64_t seed,
                                       bool rest_anchors) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto unit = [&] {
        Vec3 d;
        do {
            d = Vec3(gauss(rng), gauss(rng), gauss(rng));
        } while (d.norm() < 1e-6);
        return Vec3(d.normalized());
    };

    std::vector<State> out;
    out.reserve(count + 18);
    for (int i = 0; i < count; ++i) {
        State x;
        x.r = center + (r_lo + (r_hi - r_lo) * unif(rng)) * unit();
        x.v = v_max * unif(rng) * unit();
        out.push_back(x);
    }
    if (rest_anchors) {
        for (const double rad : {r_lo, 0.5 * (r_lo + r_hi), r_hi}) {
            for (int axis = 0; axis < 3; ++axis) {
                for (const double sign : {1.0, -1.0}) {
                    State x;
                    x.r = center;
                    x.r(axis) += sign * rad;
                    out.push_back(x);
                }
            }
        }
    }
    return out;
}

double scenario_a_max(const ScenarioConfig& cfg) {
    if (cfg.poly.a_max_override > 0.0) return cfg.poly.a_max_override;
    const SystemModel model{cfg.gravity};
    const double v_max = 5.0 * cfg.inputs.u_max;

    if (cfg.sphere) {
        const SphereConstraint c{cfg.sphere->center, cfg.sphere->rho_a()};
        const auto samples = sample_shell_states(c.center, c.rho_a, 3.0 * c.rho_a, v_max,
                                                 cfg.poly.samples, cfg.seed);
        return compute_a_max(sphere_deriv_stack(model, c), cfg.inputs, samples, cfg.poly.margin);
    }
    if (!cfg.cloud || cfg.cloud->points.empty())
        throw ConfigError("scenario_a_max requires a sphere or a nonempty point cloud");

    // worst constraint over the cloud at each sampled state
    const PointCloudObstacle& cloud = *cfg.cloud;
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : cloud.points) centroid += p;
    centroid /= static_cast<double>(cloud.points.size());
    double r_b = 0.0;
    for (const Vec3& p : cloud.points) r_b = std::max(r_b, (p - centroid).norm());

    const DerivStackFn worst = [&, model](const State& x) {
        DerivStack best;
        double best_auth = std::numeric_limits<double>::infinity();
        for (const Vec3& p : cloud.points) {
            const SphereConstraint c{p, cloud.rho_s};
            const DerivStack s = sphere_deriv_stack(model, c)(x);
            const double reach = cfg.inputs.shape == InputShape::Ball
                                     ? cfg.inputs.u_max * s.lglf_rm1.norm()
                                     : cfg.inputs.u_max * s.lglf_rm1.lpNorm<1>();
            if (reach - s.lf_r < best_auth) {
                best_auth = reach - s.lf_r;
                best = s;
            }
        }
        return best;
    };
    const int n_samples = std::min(cfg.poly.samples, 256);
    const auto samples = sample_shell_states(centroid, r_b + cloud.rho_s, r_b + 3.0 * cloud.rho_s,
                                             v_max, n_samples, cfg.seed);
    return compute_a_max(worst, cfg.inputs, samples, cfg.poly.margin);
}

namespace {

FlowBarrierConfig resolved_flow_cfg(const ScenarioConfig& cfg, double rho_a) {
    FlowBarrierConfig fc = cfg.flow;
    if (fc.t_prop <= 0.0 && fc.a_lb <= 0.0) {
        fc.a_lb = cfg.inputs.u_max - cfg.gravity.bound(rho_a);
        if (fc.a_lb <= 0.0)
            throw ConfigError(
                "flow barrier: gravity exceeds the input authority at the keep-out radius; "
                "set flow.a_lb or flow.t_prop explicitly");
    }
    return fc;
}

ClfSpec make_clf(const ScenarioConfig& cfg) {
    ClfSpec spec;
    spec.k1 = cfg.k1;
    spec.k2 = cfg.k2;
    spec.k3 = cfg.k3;
    spec.slack_penalty = cfg.slack_penalty;
    spec.target = [path = cfg.path](double s) { return path.at(s); };
    spec.validate();
    return spec;
}

InfeasiblePolicy resolve_policy(const ScenarioConfig& cfg) {
    if (cfg.sim.on_infeasible != InfeasiblePolicy::Auto) return cfg.sim.on_infeasible;
    return cfg.barrier == BarrierKind::Arctan ? InfeasiblePolicy::Halt
                                              : InfeasiblePolicy::FallbackEvading;
}

// Shared per-step reaction to the QP outcome. Returns false when the run
// must halt. `fallback_c` is the constraint row used by the evading input.
bool apply_qp_outcome(const ScenarioConfig& cfg, const QpResult& qp,
                      const std::vector<BarrierConstraint>& barriers, const ClfSpec& spec,
                      const SystemModel& model, const State& x, double s, const Row3& fallback_c,
                      StepRecord& rec, Vec3& u_out) {
    if (qp.status == QpStatus::IterationLimit)
        throw Error("qp hit the iteration limit during a scenario step");
    if (qp.status == QpStatus::Optimal) {
        u_out = qp.u;
        return true;
    }
    switch (resolve_policy(cfg)) {
        case InfeasiblePolicy::Auto:
        case InfeasiblePolicy::Halt:
            rec.u = Vec3::Zero();
            return false;
        case InfeasiblePolicy::FallbackEvading:
            u_out = evading_input(fallback_c, cfg.inputs);
            return true;
        case InfeasiblePolicy::RelaxBounds: {
            InputSet relaxed = cfg.inputs;
            relaxed.u_max *= cfg.sim.relax_factor;
            const QpResult q2 = filter_step(barriers, spec, model, x, s, relaxed, cfg.alpha_scale);
            if (q2.status != QpStatus::Optimal) {
                rec.u = Vec3::Zero();
                return false;
            }
            u_out = q2.u;
            return true;
        }
    }
    return false;
}

}  // namespace

TrajectoryLog run_scenario(const ScenarioConfig& cfg) {
    if (!cfg.sphere) throw ConfigError("run_scenario requires a sphere obstacle");
    if (cfg.sim.duration <= 0.0 || cfg.sim.dt_ctrl <= 0.0 || cfg.sim.substeps < 1)
        throw ConfigError("invalid sim parameters");
    const SphereObstacle& obs = *cfg.sphere;
    const SystemModel model{cfg.gravity};
    const SphereConstraint constraint{obs.center, obs.rho_a()};
    const ClfSpec spec = make_clf(cfg);

    TrajectoryLog log;
    std::optional<PolyBarrier> poly;
    std::optional<FlowBarrier> flow;
    switch (cfg.barrier) {
        case BarrierKind::PolyPrime: {
            log.a_max_used = scenario_a_max(cfg);
            poly = make_sphere_poly_barrier(model, constraint, log.a_max_used);
            break;
        }
        case BarrierKind::FlowH:
            flow.emplace(model, constraint, cfg.inputs, resolved_flow_cfg(cfg, constraint.rho_a));
            break;
        case BarrierKind::Arctan:
            break;
    }
    const auto eval_barrier = [&](const State& x) -> BarrierConstraint {
        switch (cfg.barrier) {
            case BarrierKind::PolyPrime: return eval_poly_barrier(*poly, x).as_constraint();
            case BarrierKind::FlowH: return flow->evaluate(x).as_constraint();
            case BarrierKind::Arctan: return arctan_barrier_eval(model, constraint, x);
        }
        throw ConfigError("unknown barrier kind");
    };

    log.initial_inside = eval_barrier(cfg.x0).value <= 0.0;

    const int steps = static_cast<int>(std::llround(cfg.sim.duration / cfg.sim.dt_ctrl));
    const double dt_sub = cfg.sim.dt_ctrl / cfg.sim.substeps;
    State x = cfg.x0;
    for (int k = 0; k < steps; ++k) {
        const double t = k * cfg.sim.dt_ctrl;
        const double s = std::clamp(t / cfg.sim.duration, 0.0, 1.0);
        const LieDerivs ld = lie_derivatives(model, constraint, x);
        const BarrierConstraint bc = eval_barrier(x);
        const std::vector<BarrierConstraint> barriers{bc};
        const QpResult qp = filter_step(barriers, spec, model, x, s, cfg.inputs, cfg.alpha_scale);

        StepRecord rec;
        rec.t = t;
        rec.x = x;
        rec.h_max = ld.h;
        rec.barrier_max = bc.value;
        rec.min_dist = (x.r - obs.center).norm();
        rec.qp_status = qp.status;
        rec.n_active_rows = static_cast<int>(qp.active_rows.size());
        for (int idx : qp.active_rows)
            rec.active_tags.push_back(idx == 0 ? "clf" : "cbf:" + std::to_string(idx - 1));

        Vec3 u = Vec3::Zero();
        const bool keep_going =
            apply_qp_outcome(cfg, qp, barriers, spec, model, x, s, ld.lglf_h, rec, u);
        if (!keep_going) {
            log.steps.push_back(rec);
            log.halted_infeasible = true;
            return log;
        }
        rec.u = u;
        log.steps.push_back(rec);
        for (int j = 0; j < cfg.sim.substeps; ++j) x = rk4_step(model, x, u, dt_sub);
    }
    return log;
}

std::vector<int> prune_pointcloud(const std::vector<Vec3>& points, double rho_s, const State& x,
                                  const SystemModel& model, const InputSet& inputs,
                                  double horizon, double margin) {
    if (horizon <= 0.0) throw ConfigError("prune horizon must be positive");
    const double u2 = inputs.norm2_bound();
    const double g_center_dist = model.gravity.kind == GravityKind::None
                                     ? 0.0
                                     : (x.r - model.gravity.center).norm();
    const double speed = x.v.norm();

    // worst-case gravity over the reachable ball, tightened once: the first
    // pass bounds the speed growth, the second uses the implied travel
    double g0 = model.gravity.bound(std::max(g_center_dist - speed * horizon, 1e-6));
    const double v_pass1 = speed + (u2 + g0) * horizon;
    g0 = model.gravity.bound(std::max(g_center_dist - v_pass1 * horizon, 1e-6));
    const double v_hi = speed + (u2 + g0) * horizon;
    const double reach = v_hi * horizon;

    std::vector<int> keep;
    keep.reserve(points.size());
    for (int i = 0; i < static_cast<int>(points.size()); ++i) {
        const Vec3 d = x.r - points[i];
        const double dist = d.norm();
        const double h = rho_s - dist;
        const double hdot = -d.dot(x.v) / std::max(dist, 1e-12);
        const double d_min = dist - reach;
        if (d_min <= 1e-9) {
            keep.push_back(i);
            continue;
        }
        const double hdd_sup = v_hi * v_hi / d_min + g0 + u2;
        const double bound = h + std::max(hdot, 0.0) * horizon + 0.5 * hdd_sup * horizon * horizon;
        if (bound >= -margin) keep.push_back(i);
    }
    return keep;
}

TrajectoryLog run_pointcloud_scenario(const ScenarioConfig& cfg) {
    if (!cfg.cloud || cfg.cloud->points.empty())
        throw ConfigError("run_pointcloud_scenario requires a nonempty point cloud");
    if (cfg.barrier != BarrierKind::PolyPrime)
        throw ConfigError("point-cloud runs use the constant-authority barrier");
    const PointCloudObstacle& cloud = *cfg.cloud;
    const SystemModel model{cfg.gravity};
    const ClfSpec spec = make_clf(cfg);

    TrajectoryLog log;
    log.a_max_used = scenario_a_max(cfg);
    const double a_max = log.a_max_used;

    std::vector<PolyBarrier> point_barriers;
    point_barriers.reserve(cloud.points.size());
    for (const Vec3& p : cloud.points)
        point_barriers.push_back(
            make_sphere_poly_barrier(model, SphereConstraint{p, cloud.rho_s}, a_max));

    const auto scan = [&](const State& x, double& h_max, double& hprime_max, double& min_dist) {
        h_max = -std::numeric_limits<double>::infinity();
        hprime_max = h_max;
        min_dist = std::numeric_limits<double>::infinity();
        for (const Vec3& p : cloud.points) {
            const double dist = (x.r - p).norm();
            const double h = cloud.rho_s - dist;
            const double hdot = -(x.r - p).dot(x.v) / std::max(dist, 1e-12);
            h_max = std::max(h_max, h);
            hprime_max = std::max(hprime_max, poly_barrier_r2(h, hdot, a_max));
            min_dist = std::min(min_dist, dist);
        }
    };

    {
        double h0, hp0, dist0;
        scan(cfg.x0, h0, hp0, dist0);
        log.initial_inside = hp0 <= 0.0;
    }

    const int steps = static_cast<int>(std::llround(cfg.sim.duration / cfg.sim.dt_ctrl));
    const double dt_sub = cfg.sim.dt_ctrl / cfg.sim.substeps;
    State x = cfg.x0;
    for (int k = 0; k < steps; ++k) {
        const double t = k * cfg.sim.dt_ctrl;
        const double s = std::clamp(t / cfg.sim.duration, 0.0, 1.0);

        std::vector<int> retained;
        if (cfg.prune.enabled) {
            retained = prune_pointcloud(cloud.points, cloud.rho_s, x, model, cfg.inputs,
                                        cfg.prune.horizon, cfg.prune.margin);
        } else {
            retained.resize(cloud.points.size());
            for (size_t i = 0; i < retained.size(); ++i) retained[i] = static_cast<int>(i);
        }

        std::vector<BarrierConstraint> barriers;
        barriers.reserve(retained.size());
        for (int i : retained)
            barriers.push_back(eval_poly_barrier(point_barriers[i], x).as_constraint());

        const QpResult qp = filter_step(barriers, spec, model, x, s, cfg.inputs, cfg.alpha_scale);

        StepRecord rec;
        rec.t = t;
        rec.x = x;
        scan(x, rec.h_max, rec.barrier_max, rec.min_dist);
        rec.qp_status = qp.status;
        rec.n_active_rows = static_cast<int>(qp.active_rows.size());
        // row 0 is the clf; subsequent rows follow the retained-point order,
        // one or more rows per barrier
        std::vector<std::string> row_tags{"clf"};
        for (size_t b = 0; b < barriers.size(); ++b)
            for (size_t r = 0; r < barriers[b].rows.size(); ++r)
                row_tags.push_back("cbf:" + std::to_string(retained[b]));
        for (int idx : qp.active_rows)
            rec.active_tags.push_back(idx < static_cast<int>(row_tags.size()) ? row_tags[idx]
                                                                              : "row");

        // nearest point supplies the evading direction if the QP fails
        int nearest = retained.empty() ? 0 : retained.front();
        double best = std::numeric_limits<double>::infinity();
        for (int i : retained) {
            const double dist = (x.r - cloud.points[i]).norm();
            if (dist < best) {
                best = dist;
                nearest = i;
            }
        }
        const Row3 c_near =
            lie_derivatives(model, SphereConstraint{cloud.points[nearest], cloud.rho_s}, x).lglf_h;

        Vec3 u = Vec3::Zero();
        const bool keep_going =
            apply_qp_outcome(cfg, qp, barriers, spec, model, x, s, c_near, rec, u);
        if (!keep_going) {
            log.steps.push_back(rec);
            log.halted_infeasible = true;
            return log;
        }
        rec.u = u;
        log.steps.push_back(rec);
        for (int j = 0; j < cfg.sim.substeps; ++j) x = rk4_step(model, x, u, dt_sub);
    }
    return log;
}

SafetySummary safety_report(const TrajectoryLog& log, const InputSet& inputs) {
    if (log.steps.empty()) throw ConfigError("safety_report requires a nonempty log");
    SafetySummary s;
    s.max_h = -std::numeric_limits<double>::infinity();
    s.max_barrier = s.max_h;
    s.min_distance = std::numeric_limits<double>::infinity();
    for (const StepRecord& rec : log.steps) {
        s.max_h = std::max(s.max_h, rec.h_max);
        s.max_barrier = std::max(s.max_barrier, rec.barrier_max);
        s.max_u_norm = std::max(s.max_u_norm, inputs.norm_of(rec.u));
        s.min_distance = std::min(s.min_distance, rec.min_dist);
        if (rec.qp_status == QpStatus::Infeasible) ++s.infeasible_steps;
    }
    s.steps = static_cast<int>(log.steps.size());
    s.completed_duration = log.steps.back().t;
    s.halted_infeasible = log.halted_infeasible;
    return s;
}

std::vector<Vec3> make_peanut_cloud(int n, std::uint64_t seed) {
    const double radius = 4.0;
    const Vec3 centers[2] = {Vec3(-2.2, 0.0, 0.0), Vec3(2.2, 0.0, 0.0)};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<Vec3> pts;
    pts.reserve(n);
    int side = 0;
    while (static_cast<int>(pts.size()) < n) {
        Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
        const double len = dir.norm();
        if (len < 1e-9) continue;
        const Vec3 p = centers[side] + radius / len * dir;
        if ((p - centers[1 - side]).norm() >= radius) {
            pts.push_back(p);
            side = 1 - side;
        }
    }
    return pts;
}

std::vector<Vec3> load_pointcloud(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open point cloud file: " + path);
    std::vector<Vec3> pts;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ss(line);
        double a, b, c;
        if (!(ss >> a >> b >> c))
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected three coordinates");
        pts.push_back(Vec3(a, b, c));
    }
    return pts;
}

}  // namespace cbf
