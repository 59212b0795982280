#pragma once

// Flow-based barrier: propagate the constraint value forward under a
// predefined evading control law, take the peak over the horizon as the
// barrier value, and differentiate the peak through the variational ODE.

#include <functional>
#include <optional>
#include <vector>

#include "cbf_shield/barrier.hpp"
#include "cbf_shield/dynamics.hpp"

namespace cbf {

// How the flow sensitivity matrix is obtained for gradient rows. Ode
// integrates the variational equation; Block uses the explicit
// [I, tI; 0, I] form, exact for the gravity-free vehicle under a frozen
// input; Auto picks Block when the model has no gravity.
enum class ThetaMode { Auto, Ode, Block };

struct FlowBarrierConfig {
    double t_prop = 0.0;        // propagation horizon; <= 0 selects the braking-time bound
    double dt = 0.01;           // propagation step
    int peak_window = 3;        // samples in the quadratic peak fit (odd, >= 3)
    double multi_max_tol = 0.02;  // relative tolerance for retaining secondary maximizers
    double a_lb = 0.0;          // lower bound on achievable dissipation, for the auto horizon
    ThetaMode theta = ThetaMode::Ode;

    void validate() const {
        if (dt <= 0.0) throw ConfigError("flow barrier: dt must be positive");
        if (peak_window < 3 || peak_window % 2 == 0)
            throw ConfigError("flow barrier: peak_window must be odd and >= 3");
        if (multi_max_tol <= 0.0 || multi_max_tol >= 1.0)
            throw ConfigError("flow barrier: multi_max_tol must lie in (0, 1)");
        if (t_prop <= 0.0 && a_lb <= 0.0)
            throw ConfigError("flow barrier: a_lb must be positive when the horizon is automatic");
    }
};

struct BarrierEvaluation {
    double value = 0.0;
    std::vector<double> maximizer_times;
    std::vector<BarrierRow> rows;

    BarrierConstraint as_constraint() const { return {value, rows}; }
};

// Input in the admissible set that minimizes c * u (the controllable part of
// the constraint's r-th derivative). Box sets saturate componentwise with
// zero components left at zero; ball sets scale -c to the boundary; c = 0
// returns zero.
Vec3 evading_input(const Row3& c, const InputSet& inputs);

// State-feedback form of the evading law for the keep-out sphere. `smooth`
// records whether the law is differentiable (ball) or piecewise constant
// (box); the sensitivity ODE freezes the input in the Jacobian when it is
// not smooth.
struct ClosedLoopPolicy {
    PolicyFn u;
    bool smooth = true;
};

ClosedLoopPolicy evading_policy(const SystemModel& model, const SphereConstraint& c,
                                const InputSet& inputs);

// Joint integration of z' = field(z) and the variational equation
// theta' = J(z) theta, theta(0) = I, with the same fixed-step RK4.
// J defaults to central finite differences of `field` with step 1e-6;
// pass `jac` to override (e.g. with an analytic Jacobian, or one that
// freezes a non-smooth input).
struct SensitivityResult {
    Eigen::MatrixXd theta;
    Eigen::VectorXd z;
};

using FieldFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

SensitivityResult integrate_with_sensitivity(const FieldFn& field, const JacobianFn& jac,
                                             const Eigen::VectorXd& x0, double t_end, double dt);

// Explicit sensitivity of the gravity-free vehicle under a locally constant
// input: [I, t I; 0, I].
Mat6 theta_double_integrator(double t);

class FlowBarrier {
public:
    FlowBarrier(SystemModel model, SphereConstraint constraint, InputSet inputs,
                FlowBarrierConfig cfg)
        : model_(model), constraint_(constraint), inputs_(inputs), cfg_(cfg) {
        cfg_.validate();
    }

    Vec3 evading_input_at(const State& x) const;

    // Peak value only (no gradient rows); used by sampling studies.
    double value(const State& x) const;

    // Full evaluation: value, maximizer times, and one affine derivative row
    // per retained maximizer.
    BarrierEvaluation evaluate(const State& x) const;

    // d psi_h(t_q)/dx: gradient of the propagated constraint value at a
    // fixed elapsed time, via the variational ODE.
    Row6 flow_gradient(const State& x, double t_q) const;

    SensitivityResult sensitivity(const State& x, double t_end) const;

    const FlowBarrierConfig& config() const { return cfg_; }
    ClosedLoopPolicy policy() const { return evading_policy(model_, constraint_, inputs_); }

private:
    BarrierEvaluation eval_core(const State& x, bool want_rows) const;
    double horizon_for(double hdot) const;
    bool use_block_theta() const;
    Row6 gradient_from_samples(const std::vector<FlowSample>& samples, double t_q) const;

    SystemModel model_;
    SphereConstraint constraint_;
    InputSet inputs_;
    FlowBarrierConfig cfg_;
};

SensitivityResult model_sensitivity(const SystemModel& model, const ClosedLoopPolicy& policy,
                                    const State& x, double t_end, double dt,
                                    const JacobianFn& analytic_jac = {});

}  // namespace cbf
