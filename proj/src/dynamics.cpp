#include "cbf_shield/dynamics.hpp"

#include <cmath>

namespace cbf {

LieDerivs lie_derivatives(const SystemModel& model, const SphereConstraint& c, const State& x) {
    const Vec3 d = x.r - c.center;
    const double n = d.norm();
    if (n < c.eps_singular) {
        throw SingularityError("constraint evaluated within " + std::to_string(c.eps_singular) +
                               " of the sphere center");
    }
    const Vec3 dhat = d / n;
    const double radial_v = dhat.dot(x.v);

    LieDerivs out;
    out.h = c.rho_a - n;
    out.lf_h = -radial_v;
    out.lglf_h = -dhat.transpose();
    out.lf2_h = (-x.v.squaredNorm() + radial_v * radial_v) / n - dhat.dot(model.gravity.accel(x.r));
    out.dh_dx.head<3>() = -dhat.transpose();
    out.dh_dx.tail<3>().setZero();
    return out;
}

State rk4_step(const SystemModel& model, const State& x, const Vec3& u, double dt) {
    const Vec6 y0 = x.pack();
    const auto f = [&](const Vec6& y) { return model.field(State::unpack(y), u); };
    const Vec6 k1 = f(y0);
    const Vec6 k2 = f(y0 + 0.5 * dt * k1);
    const Vec6 k3 = f(y0 + 0.5 * dt * k2);
    const Vec6 k4 = f(y0 + dt * k3);
    const Vec6 y1 = y0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!y1.allFinite()) throw DivergenceError("rk4_step produced non-finite state");
    return State::unpack(y1);
}

State rk4_step_policy(const SystemModel& model, const State& x, const PolicyFn& policy,
                      double dt) {
    const Vec6 y0 = x.pack();
    const auto f = [&](const Vec6& y) {
        const State s = State::unpack(y);
        return model.field(s, policy(s));
    };
    const Vec6 k1 = f(y0);
    const Vec6 k2 = f(y0 + 0.5 * dt * k1);
    const Vec6 k3 = f(y0 + 0.5 * dt * k2);
    const Vec6 k4 = f(y0 + dt * k3);
    const Vec6 y1 = y0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!y1.allFinite()) throw DivergenceError("rk4_step_policy produced non-finite state");
    return State::unpack(y1);
}

std::vector<FlowSample> propagate_flow(const SystemModel& model, const ConstraintFn& h,
                                       const State& x0, const PolicyFn& policy,
                                       const InputSet& inputs, double T, double dt) {
    if (T < 0.0 || dt <= 0.0) throw ConfigError("propagate_flow requires T >= 0 and dt > 0");
    const int n_steps = static_cast<int>(std::ceil(T / dt - 1e-12));

    std::vector<FlowSample> out;
    out.reserve(static_cast<size_t>(n_steps) + 1);
    State x = x0;
    out.push_back({0.0, x, h(x)});
    for (int k = 0; k < n_steps; ++k) {
        if (!inputs.contains(policy(x))) {
            throw ContractViolationError("policy output outside the input set at t=" +
                                         std::to_string(k * dt));
        }
        x = rk4_step_policy(model, x, policy, dt);
        out.push_back({(k + 1) * dt, x, h(x)});
    }
    return out;
}

}  // namespace cbf
