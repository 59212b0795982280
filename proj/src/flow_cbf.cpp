#include "cbf_shield/flow_cbf.hpp"

#include <algorithm>
#include <cmath>

namespace cbf {

namespace {

constexpr double kFdStep = 1e-6;

struct QuadFit {
    double a = 0.0, b = 0.0, c = 0.0;
    double vertex_t() const { return -b / (2.0 * a); }
    double vertex_value() const { return c - b * b / (4.0 * a); }
};

// Least-squares quadratic through (tau_j, y_j); exact interpolation for
// three points.
QuadFit fit_quadratic(const std::vector<double>& tau, const std::vector<double>& y) {
    Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (size_t j = 0; j < tau.size(); ++j) {
        const double t = tau[j];
        const Eigen::Vector3d basis(t * t, t, 1.0);
        M += basis * basis.transpose();
        rhs += basis * y[j];
    }
    const Eigen::Vector3d sol = M.ldlt().solve(rhs);
    return {sol(0), sol(1), sol(2)};
}

Eigen::MatrixXd fd_jacobian(const FieldFn& field, const Eigen::VectorXd& y) {
    const Eigen::Index n = y.size();
    Eigen::MatrixXd jac(n, n);
    Eigen::VectorXd yp = y, ym = y;
    for (Eigen::Index i = 0; i < n; ++i) {
        yp(i) += kFdStep;
        ym(i) -= kFdStep;
        jac.col(i) = (field(yp) - field(ym)) / (2.0 * kFdStep);
        yp(i) = y(i);
        ym(i) = y(i);
    }
    return jac;
}

// State on the propagated closed-loop trajectory at elapsed time t,
// finishing the fractional interval from the sample that starts it with the
// same stage-continuous stepper the propagation used.
State interp_flow(const SystemModel& model, const ClosedLoopPolicy& pol,
                  const std::vector<FlowSample>& samples, double dt, double t) {
    const size_t j =
        std::min(static_cast<size_t>(std::max(t, 0.0) / dt), samples.size() - 1);
    const double rem = t - samples[j].t;
    if (rem <= 1e-14) return samples[j].x;
    return rk4_step_policy(model, samples[j].x, pol.u, rem);
}

// Newton refinement of a fitted maximizer: drive d(psi)/dt = hdot to zero
// along the propagated trajectory. The quadratic fit brackets the peak to
// O(dt^2); the invariance checks need the stationarity residual several
// orders tighter than that.
struct PolishedPeak {
    double t;
    double value;
    bool converged;
};

PolishedPeak polish_peak(const SystemModel& model, const SphereConstraint& constraint,
                         const ClosedLoopPolicy& pol, const std::vector<FlowSample>& samples,
                         double dt, double t_fit) {
    const double t_lo = std::max(0.0, t_fit - 2.0 * dt);
    const double t_hi = std::min(samples.back().t, t_fit + 2.0 * dt);
    double t = std::clamp(t_fit, t_lo, t_hi);
    bool converged = false;
    State z = interp_flow(model, pol, samples, dt, t);
    for (int iter = 0; iter < 12; ++iter) {
        const LieDerivs ld = lie_derivatives(model, constraint, z);
        const double psi_dd = ld.lf2_h + ld.lglf_h.dot(pol.u(z));
        if (std::abs(ld.lf_h) <= 1e-12 * std::max(1.0, std::abs(psi_dd))) {
            converged = true;
            break;
        }
        if (psi_dd >= 0.0) break;  // not locally concave; keep the fit
        const double t_next = std::clamp(t - ld.lf_h / psi_dd, t_lo, t_hi);
        if (std::abs(t_next - t) <= 1e-15 * std::max(1.0, t)) {
            t = t_next;
            converged = true;
            break;
        }
        t = t_next;
        z = interp_flow(model, pol, samples, dt, t);
    }
    return {t, constraint.h(z), converged};
}

}  // namespace

Vec3 evading_input(const Row3& c, const InputSet& inputs) {
    if (inputs.shape == InputShape::Ball) {
        const double n = c.norm();
        if (n == 0.0) return Vec3::Zero();
        return -inputs.u_max / n * c.transpose();
    }
    Vec3 u;
    for (int i = 0; i < 3; ++i) u(i) = c(i) == 0.0 ? 0.0 : -inputs.u_max * (c(i) > 0.0 ? 1.0 : -1.0);
    return u;
}

ClosedLoopPolicy evading_policy(const SystemModel& model, const SphereConstraint& c,
                                const InputSet& inputs) {
    ClosedLoopPolicy p;
    p.smooth = inputs.shape == InputShape::Ball;
    p.u = [model, c, inputs](const State& x) {
        return evading_input(lie_derivatives(model, c, x).lglf_h, inputs);
    };
    return p;
}

SensitivityResult integrate_with_sensitivity(const FieldFn& field, const JacobianFn& jac,
                                             const Eigen::VectorXd& x0, double t_end, double dt) {
    if (t_end < 0.0 || dt <= 0.0)
        throw ConfigError("integrate_with_sensitivity requires t_end >= 0 and dt > 0");
    const Eigen::Index n = x0.size();
    const JacobianFn jfun =
        jac ? jac : JacobianFn([&field](const Eigen::VectorXd& y) { return fd_jacobian(field, y); });

    Eigen::VectorXd z = x0;
    Eigen::MatrixXd theta = Eigen::MatrixXd::Identity(n, n);

    const auto step = [&](double h) {
        const Eigen::VectorXd k1z = field(z);
        const Eigen::MatrixXd k1t = jfun(z) * theta;
        const Eigen::VectorXd z2 = z + 0.5 * h * k1z;
        const Eigen::MatrixXd t2 = theta + 0.5 * h * k1t;
        const Eigen::VectorXd k2z = field(z2);
        const Eigen::MatrixXd k2t = jfun(z2) * t2;
        const Eigen::VectorXd z3 = z + 0.5 * h * k2z;
        const Eigen::MatrixXd t3 = theta + 0.5 * h * k2t;
        const Eigen::VectorXd k3z = field(z3);
        const Eigen::MatrixXd k3t = jfun(z3) * t3;
        const Eigen::VectorXd z4 = z + h * k3z;
        const Eigen::MatrixXd t4 = theta + h * k3t;
        const Eigen::VectorXd k4z = field(z4);
        const Eigen::MatrixXd k4t = jfun(z4) * t4;
        z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
        theta += h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
    };

    const int full = static_cast<int>(std::floor(t_end / dt + 1e-12));
    for (int k = 0; k < full; ++k) step(dt);
    const double rem = t_end - full * dt;
    if (rem > 1e-12 * dt) step(rem);

    if (!theta.allFinite() || !z.allFinite())
        throw DivergenceError("sensitivity integration diverged");
    return {theta, z};
}

Mat6 theta_double_integrator(double t) {
    Mat6 theta = Mat6::Identity();
    theta.block<3, 3>(0, 3) = t * Eigen::Matrix3d::Identity();
    return theta;
}

SensitivityResult model_sensitivity(const SystemModel& model, const ClosedLoopPolicy& policy,
                                    const State& x, double t_end, double dt,
                                    const JacobianFn& analytic_jac) {
    const FieldFn field = [model, policy](const Eigen::VectorXd& y) -> Eigen::VectorXd {
        const State s = State::unpack(y);
        return model.field(s, policy.u(s));
    };
    JacobianFn jac = analytic_jac;
    if (!jac && !policy.smooth) {
        // Piecewise-constant law: differentiate the field with the input
        // frozen at its value on the nominal trajectory.
        jac = [model, policy](const Eigen::VectorXd& y) {
            const Vec3 u0 = policy.u(State::unpack(y));
            const FieldFn frozen = [model, u0](const Eigen::VectorXd& yy) -> Eigen::VectorXd {
                return model.field(State::unpack(yy), u0);
            };
            return fd_jacobian(frozen, y);
        };
    }
    return integrate_with_sensitivity(field, jac, x.pack(), t_end, dt);
}

Vec3 FlowBarrier::evading_input_at(const State& x) const {
    return evading_input(lie_derivatives(model_, constraint_, x).lglf_h, inputs_);
}

double FlowBarrier::horizon_for(double hdot) const {
    return 3.0 * std::max(hdot, 0.0) / cfg_.a_lb + 10.0 * cfg_.dt;
}

double FlowBarrier::value(const State& x) const { return eval_core(x, false).value; }

BarrierEvaluation FlowBarrier::evaluate(const State& x) const { return eval_core(x, true); }

SensitivityResult FlowBarrier::sensitivity(const State& x, double t_end) const {
    return model_sensitivity(model_, policy(), x, t_end, cfg_.dt);
}

bool FlowBarrier::use_block_theta() const {
    if (cfg_.theta == ThetaMode::Block) return true;
    if (cfg_.theta == ThetaMode::Auto) return model_.gravity.kind == GravityKind::None;
    return false;
}

Row6 FlowBarrier::flow_gradient(const State& x, double t_q) const {
    if (use_block_theta()) {
        const ClosedLoopPolicy pol = policy();
        State z = x;
        double t = 0.0;
        while (t + cfg_.dt <= t_q) {
            z = rk4_step_policy(model_, z, pol.u, cfg_.dt);
            t += cfg_.dt;
        }
        if (t_q - t > 1e-14) z = rk4_step_policy(model_, z, pol.u, t_q - t);
        const LieDerivs ld_end = lie_derivatives(model_, constraint_, z);
        return ld_end.dh_dx * theta_double_integrator(t_q);
    }
    const SensitivityResult res = sensitivity(x, t_q);
    const LieDerivs ld_end = lie_derivatives(model_, constraint_, State::unpack(res.z));
    return ld_end.dh_dx * res.theta;
}

// In block mode the propagation samples already cover [0, t_q]; finish the
// fractional step from the nearest sample instead of re-propagating.
Row6 FlowBarrier::gradient_from_samples(const std::vector<FlowSample>& samples,
                                        double t_q) const {
    const ClosedLoopPolicy pol = policy();
    const State z = interp_flow(model_, pol, samples, cfg_.dt, t_q);
    const LieDerivs ld_end = lie_derivatives(model_, constraint_, z);
    return ld_end.dh_dx * theta_double_integrator(t_q);
}

BarrierEvaluation FlowBarrier::eval_core(const State& x, bool want_rows) const {
    const LieDerivs ld0 = lie_derivatives(model_, constraint_, x);
    const double T = cfg_.t_prop > 0.0 ? cfg_.t_prop : horizon_for(ld0.lf_h);

    const ClosedLoopPolicy pol = policy();
    const auto samples =
        propagate_flow(model_, [&](const State& s) { return constraint_.h(s); }, x, pol.u,
                       inputs_, T, cfg_.dt);
    const int n = static_cast<int>(samples.size());
    if (n < cfg_.peak_window)
        throw ConfigError("flow barrier: horizon too short for the peak window");

    int k_max = 0;
    double psi_max = samples[0].h, psi_min = samples[0].h;
    for (int k = 1; k < n; ++k) {
        if (samples[k].h > psi_max) {
            psi_max = samples[k].h;
            k_max = k;
        }
        psi_min = std::min(psi_min, samples[k].h);
    }

    BarrierEvaluation out;
    if (k_max == 0 && ld0.lf_h <= 0.0) {
        out.value = ld0.h;
        out.maximizer_times = {0.0};
        out.rows = {BarrierRow{ld0.lf_h, Row3::Zero(), 0.0}};
        return out;
    }
    if (k_max == n - 1)
        throw HorizonTooShortError("flow barrier: peak not bracketed within the horizon T=" +
                                   std::to_string(T));

    const double threshold = psi_max - cfg_.multi_max_tol * (psi_max - psi_min);

    struct Candidate {
        double t;
        double value;
        bool at_zero;
    };
    std::vector<Candidate> cands;
    const int hw = cfg_.peak_window / 2;
    for (int k = 0; k < n; ++k) {
        const bool local_max = (k == 0 && samples[0].h >= samples[1].h) ||
                               (k > 0 && k < n - 1 && samples[k].h >= samples[k - 1].h &&
                                samples[k].h >= samples[k + 1].h) ||
                               (k == n - 1 && samples[k].h >= samples[k - 1].h);
        if (!local_max || samples[k].h < threshold) continue;
        if (k == n - 1)
            throw HorizonTooShortError("flow barrier: retained maximizer at the final sample");
        if (k == 0) {
            if (ld0.lf_h > 0.0) {
                // still rising at t = 0: the true peak sits inside the first
                // sample interval, below grid resolution
                const PolishedPeak peak =
                    polish_peak(model_, constraint_, pol, samples, cfg_.dt, 0.5 * cfg_.dt);
                if (peak.converged && peak.t > 0.0) {
                    cands.push_back({peak.t, peak.value, false});
                    continue;
                }
            }
            cands.push_back({0.0, samples[0].h, true});
            continue;
        }
        const int start = std::clamp(k - hw, 0, n - cfg_.peak_window);
        std::vector<double> tau(cfg_.peak_window), y(cfg_.peak_window);
        for (int j = 0; j < cfg_.peak_window; ++j) {
            tau[j] = (start + j - k) * cfg_.dt;
            y[j] = samples[start + j].h;
        }
        const QuadFit fit = fit_quadratic(tau, y);
        if (fit.a >= 0.0)
            throw DegeneratePeakError("flow barrier: non-concave quadratic fit at the peak");
        // the true peak is bracketed by the neighbors of the discrete max
        double t_q = std::clamp(samples[k].t + fit.vertex_t(),
                                std::max(0.0, samples[k].t - cfg_.dt), samples[k].t + cfg_.dt);
        double value = fit.vertex_value();
        const PolishedPeak peak = polish_peak(model_, constraint_, pol, samples, cfg_.dt, t_q);
        if (peak.converged) {
            t_q = peak.t;
            value = peak.value;
        }
        cands.push_back({t_q, value, t_q == 0.0});
    }

    // plateaus or overlapping windows can yield near-duplicate maximizers
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        return a.t < b.t;
    });
    std::vector<Candidate> merged;
    for (const Candidate& c : cands) {
        if (!merged.empty() && std::abs(c.t - merged.back().t) < 0.5 * cfg_.dt) {
            if (c.value > merged.back().value) merged.back() = c;
        } else {
            merged.push_back(c);
        }
    }

    out.value = psi_max;
    for (const Candidate& c : merged) out.value = std::max(out.value, c.value);
    for (const Candidate& c : merged) {
        out.maximizer_times.push_back(c.t);
        if (!want_rows) continue;
        if (c.at_zero) {
            out.rows.push_back({ld0.lf_h, Row3::Zero(), 0.0});
        } else {
            const Row6 grad = use_block_theta() ? gradient_from_samples(samples, c.t)
                                                : flow_gradient(x, c.t);
            BarrierRow row;
            row.t = c.t;
            row.lf = grad * model_.drift(x);
            row.lg = grad * model_.input_map(x);
            out.rows.push_back(row);
        }
    }
    return out;
}

}  // namespace cbf
