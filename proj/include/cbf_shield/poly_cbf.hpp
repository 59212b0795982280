#pragma once

// Constant-authority barrier: the system is assumed able to dissipate the
// r-th derivative of the constraint at a fixed rate a_max everywhere in the
// safe set, which turns the worst-case constraint evolution into a
// polynomial in time. Its maximum over t >= 0 is the barrier value.

#include <functional>
#include <vector>

#include "cbf_shield/barrier.hpp"
#include "cbf_shield/dynamics.hpp"

namespace cbf {

// Constraint derivatives at a state: values[i] = h^{(i)}(x) for i < r, plus
// the affine split of h^{(r)}(x, u) = lf_r + lglf_rm1 * u.
struct DerivStack {
    std::vector<double> values;
    double lf_r = 0.0;
    Row3 lglf_rm1 = Row3::Zero();
};

using DerivStackFn = std::function<DerivStack(const State&)>;

struct PolyBarrier {
    int rel_degree = 2;  // 2, 3, or 4
    double a_max = 0.0;  // guaranteed dissipation rate of h^{(r)}
    DerivStackFn stack;
};

struct PolyEvaluation {
    double value = 0.0;
    std::vector<double> maximizer_times;
    std::vector<BarrierRow> rows;

    BarrierConstraint as_constraint() const { return {value, rows}; }
};

// Derivative stack of the keep-out sphere under the vehicle model (r = 2).
DerivStackFn sphere_deriv_stack(const SystemModel& model, const SphereConstraint& c);

PolyBarrier make_sphere_poly_barrier(const SystemModel& model, const SphereConstraint& c,
                                     double a_max);

// Largest dissipation rate a such that every sampled state admits an input
// u with h^{(r)}(x, u) = -a inside the input set. Computed as the minimum
// over the sample set of the per-state authority, shrunk by `margin`
// (relative). Throws NoValidAmaxError when the result is not positive.
double compute_a_max(const DerivStackFn& stack, const InputSet& inputs,
                     const std::vector<State>& sample_set, double margin = 0.01);

// Coefficients of the worst-case constraint polynomial
//   psi(t) = sum_i h^{(i)}(x) t^i / i!  -  a_max t^r / r!,
// returned lowest order first (length r + 1).
std::vector<double> poly_coeffs(const PolyBarrier& barrier, const State& x);

double poly_eval(const std::vector<double>& coeffs, double t);

// All nonnegative maximizer times of the polynomial over t >= 0. The
// leading coefficient must be negative; stationary points come from the
// closed-form roots of the derivative (degree <= 3). Candidates whose
// values agree within eps_rel of the best are grouped into one set.
std::vector<double> maximizers(const std::vector<double>& coeffs, double eps_rel = 1e-12);

PolyEvaluation eval_poly_barrier(const PolyBarrier& barrier, const State& x);

// Explicit barrier value for relative degree 2:
// h when hdot < 0, else h + hdot^2 / (2 a_max).
double poly_barrier_r2(double h, double hdot, double a_max);

// Real roots of c0 + c1 t + c2 t^2 (all coefficients allowed to vanish).
std::vector<double> real_roots_quadratic(double c0, double c1, double c2);
// Real roots of c0 + c1 t + c2 t^2 + c3 t^3.
std::vector<double> real_roots_cubic(double c0, double c1, double c2, double c3);

}  // namespace cbf
