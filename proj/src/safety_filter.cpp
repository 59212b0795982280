#include "cbf_shield/safety_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cbf {

namespace {

constexpr double kFeasTol = 1e-11;
constexpr double kDualTol = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Dual active-set method for min 1/2 z'Gz s.t. Cz <= d with diagonal PD G.
// Starts from the unconstrained optimum and adds violated constraints one
// at a time, keeping the working set multipliers nonnegative. A violated
// constraint that is linearly dependent on the working set with no
// droppable multiplier certifies infeasibility (Farkas ray).
struct DualActiveSet {
    Eigen::VectorXd gdiag;
    Eigen::MatrixXd C;
    Eigen::VectorXd d;

    Eigen::VectorXd z;
    Eigen::VectorXd lambda;
    std::vector<int> working;
    QpStatus status = QpStatus::IterationLimit;
    int iterations = 0;

    void run(int max_iter) {
        const int n = static_cast<int>(gdiag.size());
        const int m = static_cast<int>(d.size());
        z = Eigen::VectorXd::Zero(n);
        lambda = Eigen::VectorXd::Zero(m);
        working.clear();

        const Eigen::VectorXd hdiag = gdiag.cwiseInverse();

        for (iterations = 0; iterations < max_iter; ++iterations) {
            // most violated constraint
            int p = -1;
            double worst = kFeasTol;
            for (int i = 0; i < m; ++i) {
                const double viol = C.row(i).dot(z) - d(i);
                const double scale = 1.0 + std::abs(d(i)) + C.row(i).cwiseAbs().maxCoeff() * (1.0 + z.cwiseAbs().maxCoeff());
                if (viol > worst * scale) {
                    worst = viol / scale;
                    p = i;
                }
            }
            if (p < 0) {
                status = QpStatus::Optimal;
                return;
            }

            // bring p into the working set
            bool placed = false;
            while (!placed && iterations < max_iter) {
                const int nw = static_cast<int>(working.size());
                Eigen::VectorXd dz = Eigen::VectorXd::Zero(n);
                Eigen::VectorXd nu = Eigen::VectorXd::Zero(nw);
                bool dependent = false;

                const Eigen::VectorXd hcp = hdiag.cwiseProduct(C.row(p).transpose());
                if (nw == 0) {
                    dz = -hcp;
                } else {
                    Eigen::MatrixXd cw(nw, n);
                    for (int i = 0; i < nw; ++i) cw.row(i) = C.row(working[i]);
                    const Eigen::MatrixXd hw = cw * hdiag.asDiagonal() * cw.transpose();
                    nu = hw.ldlt().solve(-cw * hcp);
                    dz = -hcp - hdiag.cwiseProduct(cw.transpose() * nu);
                }
                const double decrease = -C.row(p).dot(dz);
                dependent = decrease <= kDualTol * (1.0 + C.row(p).squaredNorm());

                const double viol = C.row(p).dot(z) - d(p);
                const double t2 = dependent ? kInf : viol / decrease;

                double t1 = kInf;
                int block = -1;
                for (int i = 0; i < nw; ++i) {
                    if (nu(i) < -kDualTol) {
                        const double t = -lambda(working[i]) / nu(i);
                        if (t < t1) {
                            t1 = t;
                            block = i;
                        }
                    }
                }

                if (t1 == kInf && t2 == kInf) {
                    status = QpStatus::Infeasible;
                    return;
                }
                const double t = std::min(t1, t2);
                if (!dependent) z += t * dz;
                for (int i = 0; i < nw; ++i) lambda(working[i]) += t * nu(i);
                lambda(p) += t;

                if (t2 <= t1) {
                    working.push_back(p);
                    placed = true;
                } else {
                    lambda(working[block]) = 0.0;
                    working.erase(working.begin() + block);
                    ++iterations;
                }
            }
            if (!placed) return;  // iteration cap hit inside the inner loop
        }
    }
};

Eigen::VectorXd cost_diag(const QpProblem& p) {
    Eigen::VectorXd g(p.dim());
    g.setConstant(2.0);
    if (p.has_slack) g(p.nu) = 2.0 * p.slack_weight;
    return g;
}

// Rows of the problem plus, for box bounds, the bound faces.
void assemble_rows(const QpProblem& p, bool with_box, Eigen::MatrixXd& C, Eigen::VectorXd& d) {
    const int n = p.dim();
    const int m_user = static_cast<int>(p.rows.size());
    const int m_box = (with_box && p.bounds.shape == InputShape::Box) ? 2 * p.nu : 0;
    C.resize(m_user + m_box, n);
    d.resize(m_user + m_box);
    for (int i = 0; i < m_user; ++i) {
        if (p.rows[i].a.size() != n) throw ConfigError("qp row width does not match problem dim");
        C.row(i) = p.rows[i].a;
        d(i) = p.rows[i].b;
    }
    for (int j = 0; j < m_box / 2; ++j) {
        C.row(m_user + 2 * j).setZero();
        C(m_user + 2 * j, j) = 1.0;
        d(m_user + 2 * j) = p.bounds.u_max;
        C.row(m_user + 2 * j + 1).setZero();
        C(m_user + 2 * j + 1, j) = -1.0;
        d(m_user + 2 * j + 1) = p.bounds.u_max;
    }
}

double kkt_residual_of(const QpProblem& p, const Eigen::VectorXd& z,
                       const Eigen::MatrixXd& C, const Eigen::VectorXd& d,
                       const Eigen::VectorXd& lambda, double lam_ball) {
    const Eigen::VectorXd g = cost_diag(p);
    Eigen::VectorXd stat = g.cwiseProduct(z) + C.transpose() * lambda;
    if (lam_ball != 0.0) stat.head(p.nu) += 2.0 * lam_ball * z.head(p.nu);
    const double scale = std::max(1.0, g.cwiseProduct(z).cwiseAbs().maxCoeff());

    double res = stat.cwiseAbs().maxCoeff() / scale;
    const double zs = 1.0 + z.cwiseAbs().maxCoeff();
    for (int i = 0; i < C.rows(); ++i) {
        const double ci = C.row(i).dot(z) - d(i);
        res = std::max(res, ci / (zs * (1.0 + std::abs(d(i)))));
        res = std::max(res, std::abs(lambda(i) * ci) / (zs * scale));
        res = std::max(res, -lambda(i));
    }
    if (p.bounds.shape == InputShape::Ball) {
        const double un = z.head(p.nu).norm();
        res = std::max(res, (un - p.bounds.u_max) / zs);
        res = std::max(res, std::abs(lam_ball * (un * un - p.bounds.u_max * p.bounds.u_max)) / (zs * scale));
    }
    return res;
}

QpResult finish(const QpProblem& p, const DualActiveSet& core, double lam_ball,
                const Eigen::MatrixXd& C, const Eigen::VectorXd& d, int extra_iters) {
    QpResult out;
    out.status = core.status;
    out.iterations = core.iterations + extra_iters;
    if (core.status != QpStatus::Optimal) return out;
    out.z = core.z;
    out.u = core.z.head(3);
    out.delta = p.has_slack ? core.z(p.nu) : 0.0;
    for (int i = 0; i < static_cast<int>(p.rows.size()); ++i) {
        if (core.lambda(i) > 1e-9) out.active_rows.push_back(i);
    }
    out.kkt_residual = kkt_residual_of(p, core.z, C, d, core.lambda, lam_ball);
    return out;
}

}  // namespace

const char* to_string(QpStatus s) {
    switch (s) {
        case QpStatus::Optimal: return "optimal";
        case QpStatus::Infeasible: return "infeasible";
        case QpStatus::IterationLimit: return "iteration_limit";
    }
    return "unknown";
}

QpResult solve_qp(const QpProblem& p) {
    if (p.nu != 3) throw ConfigError("solve_qp expects a 3-dimensional input block");
    if (p.has_slack && p.slack_weight <= 0.0)
        throw ConfigError("solve_qp requires a positive slack weight");
    if (p.bounds.u_max < 0.0) throw ConfigError("solve_qp requires u_max >= 0");

    const int max_iter = 100 + 20 * static_cast<int>(p.rows.size());

    if (p.bounds.shape == InputShape::Box) {
        DualActiveSet core;
        core.gdiag = cost_diag(p);
        assemble_rows(p, true, core.C, core.d);
        core.run(max_iter);
        return finish(p, core, 0.0, core.C, core.d, 0);
    }

    // Ball bound: reweighting the u-block of the cost by (1 + lam) and
    // solving the row-constrained problem traces the KKT conditions of the
    // ball-constrained problem; bisect lam until ||u|| meets the bound.
    Eigen::MatrixXd C;
    Eigen::VectorXd d;
    assemble_rows(p, false, C, d);

    int iters = 0;
    const auto solve_at = [&](double lam) {
        DualActiveSet core;
        core.gdiag = cost_diag(p);
        core.gdiag.head(p.nu).array() = 2.0 * (1.0 + lam);
        core.C = C;
        core.d = d;
        core.run(max_iter);
        iters += core.iterations;
        return core;
    };

    DualActiveSet core = solve_at(0.0);
    if (core.status != QpStatus::Optimal) return finish(p, core, 0.0, C, d, iters);
    if (core.z.head(p.nu).norm() <= p.bounds.u_max * (1.0 + 1e-12))
        return finish(p, core, 0.0, C, d, iters - core.iterations);

    double hi = 1.0;
    DualActiveSet trial = solve_at(hi);
    while (trial.status == QpStatus::Optimal && trial.z.head(p.nu).norm() > p.bounds.u_max &&
           hi < 1e14) {
        hi *= 8.0;
        trial = solve_at(hi);
    }
    if (trial.status != QpStatus::Optimal) return finish(p, trial, hi, C, d, iters);
    if (trial.z.head(p.nu).norm() > p.bounds.u_max * (1.0 + 1e-9)) {
        // rows alone force ||u|| above the bound
        trial.status = QpStatus::Infeasible;
        return finish(p, trial, hi, C, d, iters);
    }

    double lo = hi > 1.0 ? hi / 8.0 : 0.0;
    for (int k = 0; k < 200; ++k) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        const DualActiveSet probe = solve_at(mid);
        if (probe.status == QpStatus::Optimal && probe.z.head(p.nu).norm() <= p.bounds.u_max)
            hi = mid;
        else
            lo = mid;
    }
    DualActiveSet final_core = solve_at(hi);
    return finish(p, final_core, hi, C, d, iters - final_core.iterations);
}

double clf_value(const ClfSpec& spec, const State& x, double s) {
    const Vec3 e = x.r - spec.target(s);
    const Vec3 w = x.v - spec.k1 * e;
    return 0.5 * e.squaredNorm() + 0.5 * spec.k2 * w.squaredNorm();
}

QpRow clf_row(const ClfSpec& spec, const SystemModel& model, const State& x, double s) {
    const Vec3 e = x.r - spec.target(s);
    const Vec3 w = x.v - spec.k1 * e;
    const Row3 dv_dr = e.transpose() - spec.k1 * spec.k2 * w.transpose();
    const Row3 dv_dv = spec.k2 * w.transpose();
    const double lf_v = dv_dr.dot(x.v) + dv_dv.dot(model.gravity.accel(x.r));
    const double v = 0.5 * e.squaredNorm() + 0.5 * spec.k2 * w.squaredNorm();

    QpRow row;
    row.a.resize(4);
    row.a << dv_dv, 1.0;
    row.b = -spec.k3 * v - lf_v;
    row.tag = "clf";
    return row;
}

std::vector<QpRow> cbf_rows(const BarrierConstraint& bc, double alpha_scale, int dim,
                            const std::string& tag) {
    std::vector<QpRow> rows;
    rows.reserve(bc.rows.size());
    for (size_t i = 0; i < bc.rows.size(); ++i) {
        const BarrierRow& br = bc.rows[i];
        QpRow row;
        row.a = Eigen::RowVectorXd::Zero(dim);
        row.a.head(3) = br.lg;
        row.b = alpha_scale * (-bc.value) - br.lf;
        row.tag = tag + (bc.rows.size() > 1 ? ":" + std::to_string(i) : "");
        rows.push_back(std::move(row));
    }
    return rows;
}

BarrierConstraint arctan_barrier_eval(const SystemModel& model, const SphereConstraint& c,
                                      const State& x) {
    const LieDerivs ld = lie_derivatives(model, c, x);
    const double w = std::atan(ld.lf_h) + M_PI / 2.0;
    const double denom = 1.0 + ld.lf_h * ld.lf_h;
    BarrierConstraint out;
    out.value = w * ld.h;
    BarrierRow row;
    row.lf = w * ld.lf_h + ld.h * ld.lf2_h / denom;
    row.lg = ld.h / denom * ld.lglf_h;
    out.rows = {row};
    return out;
}

QpRow arctan_barrier_row(const SystemModel& model, const SphereConstraint& c, const State& x,
                         double alpha_scale) {
    return cbf_rows(arctan_barrier_eval(model, c, x), alpha_scale, 4, "cbf").front();
}

QpResult filter_step(const std::vector<BarrierConstraint>& barriers, const ClfSpec& spec,
                     const SystemModel& model, const State& x, double s, const InputSet& inputs,
                     double alpha_scale) {
    spec.validate();
    QpProblem qp;
    qp.nu = 3;
    qp.has_slack = true;
    qp.slack_weight = spec.slack_penalty;
    qp.bounds = inputs;
    qp.rows.push_back(clf_row(spec, model, x, s));
    for (size_t b = 0; b < barriers.size(); ++b) {
        for (auto& row : cbf_rows(barriers[b], alpha_scale, qp.dim(),
                                  "cbf" + std::to_string(b)))
            qp.rows.push_back(std::move(row));
    }
    return solve_qp(qp);
}

}  // namespace cbf
