#pragma once

// Control-affine vehicle dynamics, keep-out-sphere constraint machinery,
// and fixed-step flow propagation.

#include <functional>
#include <vector>

#include "cbf_shield/core.hpp"

namespace cbf {

struct State {
    Vec3 r = Vec3::Zero();  // position
    Vec3 v = Vec3::Zero();  // velocity

    Vec6 pack() const {
        Vec6 y;
        y << r, v;
        return y;
    }
    static State unpack(const Vec6& y) { return {y.head<3>(), y.tail<3>()}; }
    bool finite() const { return r.allFinite() && v.allFinite(); }
};

enum class GravityKind { None, PointMass };

struct GravityModel {
    GravityKind kind = GravityKind::None;
    double mu = 0.0;  // length^3 / time^2
    Vec3 center = Vec3::Zero();

    Vec3 accel(const Vec3& r) const {
        if (kind == GravityKind::None) return Vec3::Zero();
        const Vec3 d = r - center;
        const double n = d.norm();
        return -mu / (n * n * n) * d;
    }
    // Largest gravity magnitude at distance >= rho from the center.
    double bound(double rho) const {
        if (kind == GravityKind::None) return 0.0;
        return mu / (rho * rho);
    }
};

// Double-integrator translational dynamics with optional point-mass gravity:
// rdot = v, vdot = f_mu(r) + u. The position block of g is zero, so any
// position-only constraint has relative degree 2 by construction.
struct SystemModel {
    GravityModel gravity;
    static constexpr int relative_degree = 2;

    Vec6 drift(const State& x) const {
        Vec6 f;
        f << x.v, gravity.accel(x.r);
        return f;
    }
    // Input map is constant: g = [0; I].
    Eigen::Matrix<double, 6, 3> input_map(const State&) const {
        Eigen::Matrix<double, 6, 3> g = Eigen::Matrix<double, 6, 3>::Zero();
        g.block<3, 3>(3, 0).setIdentity();
        return g;
    }
    Vec6 field(const State& x, const Vec3& u) const {
        Vec6 f;
        f << x.v, gravity.accel(x.r) + u;
        return f;
    }
};

enum class InputShape { Box, Ball };

struct InputSet {
    InputShape shape = InputShape::Box;
    double u_max = 0.0;

    bool contains(const Vec3& u, double tol = 1e-9) const {
        const double n = shape == InputShape::Box ? u.lpNorm<Eigen::Infinity>() : u.norm();
        return n <= u_max + tol;
    }
    // Norm matching the set shape (used for feasibility reporting).
    double norm_of(const Vec3& u) const {
        return shape == InputShape::Box ? u.lpNorm<Eigen::Infinity>() : u.norm();
    }
    // sup over the set of the 2-norm, used in reachability bounds.
    double norm2_bound() const {
        return shape == InputShape::Box ? u_max * std::sqrt(3.0) : u_max;
    }
};

// Keep-out sphere: h(x) = rho_a - ||r - center||, safe set is h <= 0.
struct SphereConstraint {
    Vec3 center = Vec3::Zero();
    double rho_a = 1.0;
    double eps_singular = 1e-9;

    double h(const State& x) const { return rho_a - (x.r - center).norm(); }
};

struct LieDerivs {
    double h = 0.0;
    double lf_h = 0.0;    // hdot (input-independent at relative degree 2)
    double lf2_h = 0.0;   // drift part of hddot
    Row3 lglf_h = Row3::Zero();  // input row of hddot
    Row6 dh_dx = Row6::Zero();   // gradient of h w.r.t. (r, v)
};

// Analytic derivatives of the keep-out constraint along the model.
// Throws SingularityError when the state is within eps_singular of the center.
LieDerivs lie_derivatives(const SystemModel& model, const SphereConstraint& c, const State& x);

struct FlowSample {
    double t = 0.0;
    State x;
    double h = 0.0;
};

using ConstraintFn = std::function<double(const State&)>;
using PolicyFn = std::function<Vec3(const State&)>;

// One fixed RK4 step with the input held constant over the step.
State rk4_step(const SystemModel& model, const State& x, const Vec3& u, double dt);

// One fixed RK4 step of the closed loop, with the policy re-evaluated at
// every stage state (continuous feedback, no hold).
State rk4_step_policy(const SystemModel& model, const State& x, const PolicyFn& policy,
                      double dt);

// Propagates the closed loop under `policy` and records (t, x, h) on the
// grid t_k = k*dt, k = 0..ceil(T/dt). The policy enters every integrator
// stage; its output is checked against the input set at the sample points.
std::vector<FlowSample> propagate_flow(const SystemModel& model, const ConstraintFn& h,
                                       const State& x0, const PolicyFn& policy,
                                       const InputSet& inputs, double T, double dt);

}  // namespace cbf
