#pragma once

// Closed-loop simulation harness: sphere avoidance under three barrier
// choices, point-cloud avoidance with per-point barriers and finite-horizon
// constraint pruning, trajectory logging, and safety metrics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cbf_shield/flow_cbf.hpp"
#include "cbf_shield/poly_cbf.hpp"
#include "cbf_shield/safety_filter.hpp"

namespace cbf {

struct SphereObstacle {
    Vec3 center = Vec3::Zero();
    double rho_t = 5.0;  // obstacle radius
    double rho_s = 1.0;  // standoff distance
    double rho_a() const { return rho_t + rho_s; }
};

struct PointCloudObstacle {
    std::vector<Vec3> points;
    double rho_s = 1.0;  // standoff kept from every point
};

struct PathSpec {
    std::vector<Vec3> waypoints;  // r_p(s) piecewise linear over s in [0, 1]
    Vec3 at(double s) const;
};

enum class BarrierKind { FlowH, PolyPrime, Arctan };

// Auto resolves to Halt for the arctan comparison barrier (its
// infeasibility is the observable of interest) and to FallbackEvading for
// the constructed barriers, where a sampled-data excursion out of the
// sublevel set can make isolated steps infeasible and the evading input is
// the correct recovery.
enum class InfeasiblePolicy { Auto, Halt, FallbackEvading, RelaxBounds };

struct SimParams {
    double duration = 60.0;
    double dt_ctrl = 0.1;
    int substeps = 10;
    InfeasiblePolicy on_infeasible = InfeasiblePolicy::Auto;
    double relax_factor = 10.0;
};

struct PruneParams {
    bool enabled = true;
    double horizon = 5.0;
    double margin = 0.5;
};

struct PolyParams {
    double a_max_override = 0.0;  // <= 0 selects compute_a_max over shell samples
    double margin = 0.01;
    int samples = 2048;
};

struct ScenarioConfig {
    std::optional<SphereObstacle> sphere;
    std::optional<PointCloudObstacle> cloud;
    PathSpec path;
    BarrierKind barrier = BarrierKind::PolyPrime;
    double k1 = -0.3, k2 = 2.0, k3 = 0.5, slack_penalty = 100.0;
    InputSet inputs{InputShape::Box, 0.2};
    GravityModel gravity;
    SimParams sim;
    PruneParams prune;
    FlowBarrierConfig flow{0.0, 0.01, 3, 0.02, 0.0};
    PolyParams poly;
    double alpha_scale = 1.0;
    State x0;
    std::uint64_t seed = 0;
};

struct StepRecord {
    double t = 0.0;
    State x;
    Vec3 u = Vec3::Zero();
    double h_max = 0.0;        // largest constraint value over all obstacles
    double barrier_max = 0.0;  // largest barrier value
    double min_dist = 0.0;     // smallest obstacle distance
    QpStatus qp_status = QpStatus::Optimal;
    int n_active_rows = 0;
    std::vector<std::string> active_tags;
};

struct TrajectoryLog {
    std::vector<StepRecord> steps;
    bool halted_infeasible = false;
    bool initial_inside = true;
    double a_max_used = 0.0;
};

struct SafetySummary {
    double max_h = 0.0;
    double max_barrier = 0.0;
    double max_u_norm = 0.0;
    int infeasible_steps = 0;
    double min_distance = 0.0;
    int steps = 0;
    double completed_duration = 0.0;
    bool halted_infeasible = false;
};

// Sphere avoidance under the configured barrier. Infeasible QP steps are
// logged; the on_infeasible policy decides whether the run halts, falls
// back to the evading input, or re-solves with relaxed bounds.
TrajectoryLog run_scenario(const ScenarioConfig& cfg);

// Indices of cloud points whose constraint could reach -margin within the
// horizon under any admissible input (a guaranteed superset).
std::vector<int> prune_pointcloud(const std::vector<Vec3>& points, double rho_s, const State& x,
                                  const SystemModel& model, const InputSet& inputs,
                                  double horizon, double margin);

// Per-point constant-authority barriers stacked into one QP per step.
TrajectoryLog run_pointcloud_scenario(const ScenarioConfig& cfg);

SafetySummary safety_report(const TrajectoryLog& log, const InputSet& inputs);

// Two overlapped spheres sampled on their outer surface; nonconvex waist.
std::vector<Vec3> make_peanut_cloud(int n, std::uint64_t seed);

// One point per line, three coordinates, '#' comments.
std::vector<Vec3> load_pointcloud(const std::string& path);

// Random states on a shell around `center` with speeds up to v_max;
// includes rest anchors (v = 0) at the inner/outer radii on several axes.
std::vector<State> sample_shell_states(const Vec3& center, double r_lo, double r_hi,
                                       double v_max, int count, std::uint64_t seed,
                                       bool rest_anchors = true);

// Dissipation rate for the configured scenario (override or sampled).
double scenario_a_max(const ScenarioConfig& cfg);

// Default path: circle on the obstacle surface with a vertical wiggle.
PathSpec default_surface_path(const Vec3& center, double radius, int n_waypoints = 25);

}  // namespace cbf
