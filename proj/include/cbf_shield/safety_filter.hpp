#pragma once

// Pointwise QP safety filter: tracking CLF row with slack, barrier rows as
// hard constraints, input bounds, and a small dense active-set solver.

#include <functional>
#include <string>
#include <vector>

#include "cbf_shield/barrier.hpp"
#include "cbf_shield/dynamics.hpp"

namespace cbf {

enum class QpStatus { Optimal, Infeasible, IterationLimit };

const char* to_string(QpStatus s);

struct QpRow {
    Eigen::RowVectorXd a;  // coefficients over (u, delta)
    double b = 0.0;        // a * z <= b
    std::string tag;
};

struct QpProblem {
    int nu = 3;
    bool has_slack = true;
    double slack_weight = 1.0;  // J in u'u + J delta^2
    std::vector<QpRow> rows;
    InputSet bounds;  // box or ball on the u block

    int dim() const { return nu + (has_slack ? 1 : 0); }
};

struct QpResult {
    QpStatus status = QpStatus::IterationLimit;
    Eigen::VectorXd z;
    Vec3 u = Vec3::Zero();
    double delta = 0.0;
    double kkt_residual = 0.0;
    std::vector<int> active_rows;  // indices into QpProblem::rows with positive multiplier
    int iterations = 0;
};

// Strictly convex dense QP over (u, delta). Optimal results satisfy all
// rows, the input bounds, and a scaled KKT residual <= 1e-8; infeasibility
// is detected from a degenerate dual step (Farkas-type ray).
QpResult solve_qp(const QpProblem& p);

struct ClfSpec {
    double k1 = -0.3;
    double k2 = 2.0;
    double k3 = 0.5;
    double slack_penalty = 100.0;
    std::function<Vec3(double)> target;  // r_p(s)

    void validate() const {
        if (k2 <= 0.0 || k3 <= 0.0 || slack_penalty <= 0.0)
            throw ConfigError("clf gains k2, k3 and the slack penalty must be positive");
        if (!target) throw ConfigError("clf target evaluator is not set");
    }
};

double clf_value(const ClfSpec& spec, const State& x, double s);

// Tracking constraint LfV + LgV u + delta <= -k3 V as a row over (u, delta).
QpRow clf_row(const ClfSpec& spec, const SystemModel& model, const State& x, double s);

// One QP row per barrier maximizer: lg u <= alpha_scale * (-value) - lf.
std::vector<QpRow> cbf_rows(const BarrierConstraint& bc, double alpha_scale, int dim,
                            const std::string& tag);

// Comparison barrier (arctan(hdot) + pi/2) * h; valid only without input
// bounds, used to demonstrate infeasibility under a bounded set.
BarrierConstraint arctan_barrier_eval(const SystemModel& model, const SphereConstraint& c,
                                      const State& x);

QpRow arctan_barrier_row(const SystemModel& model, const SphereConstraint& c, const State& x,
                         double alpha_scale);

// Assembles and solves the filter QP. Infeasible results are returned, not
// masked; callers decide how to react.
QpResult filter_step(const std::vector<BarrierConstraint>& barriers, const ClfSpec& spec,
                     const SystemModel& model, const State& x, double s, const InputSet& inputs,
                     double alpha_scale = 1.0);

}  // namespace cbf
