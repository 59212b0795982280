#include "cbf_shield/poly_cbf.hpp"

#include <algorithm>
#include <cmath>

namespace cbf {

namespace {

double factorial(int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

double poly_deriv_eval(const std::vector<double>& c, double t) {
    double acc = 0.0;
    for (int i = static_cast<int>(c.size()) - 1; i >= 1; --i) acc = acc * t + i * c[i];
    return acc;
}

void newton_polish(const std::vector<double>& dcoeffs, double& root) {
    // dcoeffs are the coefficients of the polynomial whose root we refine.
    for (int it = 0; it < 3; ++it) {
        const double f = [&] {
            double acc = 0.0;
            for (int i = static_cast<int>(dcoeffs.size()) - 1; i >= 0; --i)
                acc = acc * root + dcoeffs[i];
            return acc;
        }();
        const double fp = poly_deriv_eval(dcoeffs, root);
        if (std::abs(fp) < 1e-300) return;
        const double step = f / fp;
        if (!std::isfinite(step)) return;
        root -= step;
    }
}

}  // namespace

DerivStackFn sphere_deriv_stack(const SystemModel& model, const SphereConstraint& c) {
    return [model, c](const State& x) {
        const LieDerivs ld = lie_derivatives(model, c, x);
        DerivStack s;
        s.values = {ld.h, ld.lf_h};
        s.lf_r = ld.lf2_h;
        s.lglf_rm1 = ld.lglf_h;
        return s;
    };
}

PolyBarrier make_sphere_poly_barrier(const SystemModel& model, const SphereConstraint& c,
                                     double a_max) {
    return PolyBarrier{2, a_max, sphere_deriv_stack(model, c)};
}

double compute_a_max(const DerivStackFn& stack, const InputSet& inputs,
                     const std::vector<State>& sample_set, double margin) {
    if (sample_set.empty()) throw ConfigError("compute_a_max requires a nonempty sample set");
    double a_min = std::numeric_limits<double>::infinity();
    for (const State& x : sample_set) {
        const DerivStack s = stack(x);
        const double reach = inputs.shape == InputShape::Ball
                                 ? inputs.u_max * s.lglf_rm1.norm()
                                 : inputs.u_max * s.lglf_rm1.lpNorm<1>();
        a_min = std::min(a_min, reach - s.lf_r);
    }
    const double a = a_min * (1.0 - margin);
    if (!(a > 0.0)) {
        throw NoValidAmaxError(
            "no positive dissipation rate is achievable over the sampled safe set "
            "(input authority " +
            std::to_string(inputs.u_max) + " is insufficient)");
    }
    return a;
}

std::vector<double> poly_coeffs(const PolyBarrier& barrier, const State& x) {
    const int r = barrier.rel_degree;
    if (r < 2 || r > 4) throw ConfigError("poly barrier supports relative degree 2..4");
    if (!(barrier.a_max > 0.0)) throw ConfigError("poly barrier requires a_max > 0");
    const DerivStack s = barrier.stack(x);
    if (static_cast<int>(s.values.size()) != r)
        throw ConfigError("derivative stack size does not match the relative degree");

    std::vector<double> c(static_cast<size_t>(r) + 1);
    for (int i = 0; i < r; ++i) c[i] = s.values[i] / factorial(i);
    c[r] = -barrier.a_max / factorial(r);
    return c;
}

double poly_eval(const std::vector<double>& coeffs, double t) {
    double acc = 0.0;
    for (int i = static_cast<int>(coeffs.size()) - 1; i >= 0; --i) acc = acc * t + coeffs[i];
    return acc;
}

std::vector<double> real_roots_quadratic(double c0, double c1, double c2) {
    if (c2 == 0.0) {
        if (c1 == 0.0) return {};
        return {-c0 / c1};
    }
    const double disc = c1 * c1 - 4.0 * c2 * c0;
    if (disc < 0.0) return {};
    const double sq = std::sqrt(disc);
    if (c1 == 0.0) {
        const double r = sq / (2.0 * std::abs(c2));
        return {-r, r};
    }
    const double q = -0.5 * (c1 + (c1 > 0.0 ? sq : -sq));
    std::vector<double> roots{q / c2};
    if (q != 0.0) roots.push_back(c0 / q);
    return roots;
}

std::vector<double> real_roots_cubic(double c0, double c1, double c2, double c3) {
    const double scale = std::max({std::abs(c0), std::abs(c1), std::abs(c2), std::abs(c3)});
    if (scale == 0.0) return {};
    if (std::abs(c3) < 1e-14 * scale) return real_roots_quadratic(c0, c1, c2);

    // Depressed cubic y^3 + p y + q with t = y - c2/(3 c3).
    const double b = c2 / c3, c = c1 / c3, d = c0 / c3;
    const double shift = -b / 3.0;
    const double p = c - b * b / 3.0;
    const double q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;

    std::vector<double> roots;
    const double disc = -(4.0 * p * p * p + 27.0 * q * q);
    if (disc > 0.0) {
        // three real roots, trigonometric form
        const double m = 2.0 * std::sqrt(-p / 3.0);
        const double arg = std::clamp(3.0 * q / (p * m), -1.0, 1.0);
        const double theta = std::acos(arg) / 3.0;
        for (int k = 0; k < 3; ++k)
            roots.push_back(shift + m * std::cos(theta - 2.0 * M_PI * k / 3.0));
    } else {
        const double half_q = q / 2.0;
        const double rad = std::sqrt(std::max(0.0, half_q * half_q + p * p * p / 27.0));
        const double u = std::cbrt(-half_q + rad);
        const double v = std::cbrt(-half_q - rad);
        roots.push_back(shift + u + v);
        if (disc == 0.0 && (u + v) != 0.0) roots.push_back(shift - (u + v) / 2.0);
    }
    const std::vector<double> full{c0, c1, c2, c3};
    for (double& r : roots) newton_polish(full, r);
    return roots;
}

std::vector<double> maximizers(const std::vector<double>& coeffs, double eps_rel) {
    if (coeffs.size() < 2 || !(coeffs.back() < 0.0))
        throw ConfigError("maximizers requires a negative leading coefficient");

    // stationary points: roots of the derivative polynomial (degree <= 3)
    std::vector<double> d(coeffs.size() - 1);
    for (size_t i = 1; i < coeffs.size(); ++i) d[i - 1] = coeffs[i] * static_cast<double>(i);

    std::vector<double> stat;
    switch (d.size()) {
        case 1: {
            if (d[0] != 0.0) break;  // constant nonzero derivative: no stationary point
            stat = {};
            break;
        }
        case 2:
            stat = real_roots_quadratic(d[0], d[1], 0.0);
            break;
        case 3:
            stat = real_roots_quadratic(d[0], d[1], d[2]);
            break;
        case 4:
            stat = real_roots_cubic(d[0], d[1], d[2], d[3]);
            break;
        default:
            throw ConfigError("maximizers supports polynomial degree <= 4");
    }

    std::vector<double> candidates{0.0};
    for (double t : stat) {
        if (t > -1e-12 && t < 0.0) t = 0.0;
        if (t >= 0.0) candidates.push_back(t);
    }

    double best = -std::numeric_limits<double>::infinity();
    for (double t : candidates) best = std::max(best, poly_eval(coeffs, t));

    std::vector<double> out;
    const double tol = eps_rel * std::max(1.0, std::abs(best));
    for (double t : candidates) {
        if (poly_eval(coeffs, t) >= best - tol) out.push_back(t);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end(),
                          [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); }),
              out.end());
    return out;
}

PolyEvaluation eval_poly_barrier(const PolyBarrier& barrier, const State& x) {
    const std::vector<double> coeffs = poly_coeffs(barrier, x);
    const DerivStack s = barrier.stack(x);
    PolyEvaluation out;
    out.maximizer_times = maximizers(coeffs);
    out.value = poly_eval(coeffs, out.maximizer_times.front());

    const int r = barrier.rel_degree;
    const double fct = factorial(r - 1);
    for (double t : out.maximizer_times) {
        BarrierRow row;
        row.t = t;
        if (t == 0.0) {
            row.lf = s.values[1];
            row.lg.setZero();
        } else {
            const double k = std::pow(t, r - 1) / fct;
            row.lf = k * (barrier.a_max + s.lf_r);
            row.lg = k * s.lglf_rm1;
        }
        out.rows.push_back(row);
    }
    return out;
}

double poly_barrier_r2(double h, double hdot, double a_max) {
    if (hdot < 0.0) return h;
    return h + hdot * hdot / (2.0 * a_max);
}

}  // namespace cbf
