#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "cbf_shield/flow_cbf.hpp"
#include "cbf_shield/poly_cbf.hpp"
#include "oracles.hpp"

using namespace cbf;

TEST_CASE("evading input saturates against the derivative row") {
    SUBCASE("box with a single active axis") {
        const Vec3 u = evading_input(Row3(1.0, 0.0, 0.0), InputSet{InputShape::Box, 1.0});
        CHECK(u == Vec3(-1.0, 0.0, 0.0));
    }
    SUBCASE("ball scales the row to the boundary") {
        const Vec3 u = evading_input(Row3(3.0, 4.0, 0.0), InputSet{InputShape::Ball, 5.0});
        CHECK((u - Vec3(-3.0, -4.0, 0.0)).norm() == doctest::Approx(0.0).epsilon(1e-14));
    }
    SUBCASE("box saturates every nonzero component") {
        const Vec3 u = evading_input(Row3(1.0, 1.0, 1.0), InputSet{InputShape::Box, 2.0});
        CHECK(u == Vec3(-2.0, -2.0, -2.0));
    }
    SUBCASE("zero row returns zero input") {
        CHECK(evading_input(Row3::Zero(), InputSet{InputShape::Ball, 5.0}).norm() == 0.0);
    }
    SUBCASE("no random feasible input beats the minimizer") {
        auto g = oracle::rng(5);
        std::uniform_real_distribution<double> comp(-2.0, 2.0);
        const Row3 c(0.7, -1.3, 0.0);
        const InputSet box{InputShape::Box, 2.0};
        const Vec3 u_star = evading_input(c, box);
        for (int i = 0; i < 100000; ++i) {
            const Vec3 u(comp(g), comp(g), comp(g));
            CHECK(c.dot(u_star) <= c.dot(u) + 1e-12);
        }
    }
}

TEST_CASE("receding state keeps its current constraint value") {
    SystemModel model;
    SphereConstraint c{Vec3::Zero(), 6.0};
    FlowBarrier fb(model, c, InputSet{InputShape::Ball, 0.2},
                   FlowBarrierConfig{0.0, 0.01, 3, 0.02, 0.2});
    const State x{Vec3(10.0, 0.0, 0.0), Vec3(0.5, 0.2, 0.0)};  // moving away
    const auto eval = fb.evaluate(x);
    CHECK(eval.value == doctest::Approx(c.h(x)));
    REQUIRE(eval.maximizer_times.size() == 1);
    CHECK(eval.maximizer_times[0] == 0.0);
    REQUIRE(eval.rows.size() == 1);
    CHECK(eval.rows[0].lg.norm() == 0.0);
    CHECK(eval.rows[0].lf < 0.0);
}

TEST_CASE("at rest the barrier equals the constraint") {
    SystemModel model;
    SphereConstraint c{Vec3::Zero(), 6.0};
    FlowBarrier fb(model, c, InputSet{InputShape::Ball, 0.2},
                   FlowBarrierConfig{0.0, 0.01, 3, 0.02, 0.2});
    const State x{Vec3(9.0, 0.0, 0.0), Vec3::Zero()};
    const auto eval = fb.evaluate(x);
    CHECK(eval.value == doctest::Approx(-3.0));
    CHECK(eval.maximizer_times == std::vector<double>{0.0});
}

TEST_CASE("head-on approach matches the radial braking closed form") {
    SystemModel model;
    SphereConstraint c{Vec3::Zero(), 6.0};
    const double u_max = 0.2, d = 10.0, s = 0.8;
    FlowBarrier fb(model, c, InputSet{InputShape::Ball, u_max},
                   FlowBarrierConfig{0.0, 0.001, 3, 0.02, u_max});
    const State x{Vec3(d, 0.0, 0.0), Vec3(-s, 0.0, 0.0)};
    const auto eval = fb.evaluate(x);

    const double expected = poly_barrier_r2(c.rho_a - d, s, u_max);
    CHECK(eval.value == doctest::Approx(expected).epsilon(1e-4));
    REQUIRE(eval.maximizer_times.size() == 1);
    CHECK(eval.maximizer_times[0] == doctest::Approx(s / u_max).epsilon(1e-4));
}

TEST_CASE("sensitivity at t=0 is the identity") {
    const FieldFn field = [](const Eigen::VectorXd& y) { return Eigen::VectorXd(-y); };
    Eigen::VectorXd x0(2);
    x0 << 1.0, -2.0;
    const auto res = integrate_with_sensitivity(field, {}, x0, 0.0, 0.01);
    CHECK((res.theta - Eigen::MatrixXd::Identity(2, 2)).norm() == 0.0);
    CHECK((res.z - x0).norm() == 0.0);
}

TEST_CASE("scalar linear system matches the matrix exponential") {
    const FieldFn field = [](const Eigen::VectorXd& y) { return Eigen::VectorXd(-y); };
    Eigen::VectorXd x0(1);
    x0 << 1.0;
    const auto res = integrate_with_sensitivity(field, {}, x0, 1.0, 0.001);
    CHECK(res.theta(0, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-9));
    CHECK(res.z(0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-9));
}

TEST_CASE("vehicle sensitivity under a locally constant input is the block form") {
    SystemModel model;
    ClosedLoopPolicy policy{[](const State&) { return Vec3(0.1, -0.05, 0.02); }, true};
    const State x{Vec3(2.0, 1.0, -1.0), Vec3(0.3, 0.0, 0.1)};
    for (const double t : {0.5, 1.0, 3.0}) {
        const auto res = model_sensitivity(model, policy, x, t, 0.01);
        const Mat6 expected = theta_double_integrator(t);
        CHECK((res.theta - expected).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("flow gradient at zero elapsed time is the constraint gradient") {
    SystemModel model;
    SphereConstraint c{Vec3::Zero(), 6.0};
    FlowBarrier fb(model, c, InputSet{InputShape::Ball, 0.2},
                   FlowBarrierConfig{0.0, 0.01, 3, 0.02, 0.2});
    const State x{Vec3(10.0, 2.0, 0.0), Vec3(-0.5, 0.0, 0.0)};
    const Row6 grad = fb.flow_gradient(x, 0.0);
    const Row6 expected = lie_derivatives(model, c, x).dh_dx;
    CHECK((grad - expected).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("flow gradient matches finite differences of the barrier value") {
    SystemModel model;
    SphereConstraint c{Vec3::Zero(), 6.0};
    const double u_max = 0.2;
    FlowBarrier fb(model, c, InputSet{InputShape::Ball, u_max},
                   FlowBarrierConfig{0.0, 0.001, 3, 0.02, u_max});
    const auto value_fn = [&](const State& s) { return fb.value(s); };

    const State states[] = {
        {Vec3(10.0, 0.0, 0.0), Vec3(-0.8, 0.0, 0.0)},    // head-on
        {Vec3(9.0, 3.0, 1.0), Vec3(-0.6, -0.1, 0.05)},   // oblique approach
        {Vec3(8.0, -2.0, 0.5), Vec3(-0.4, 0.3, -0.1)},   // skewed approach
    };
    for (const State& x : states) {
        const auto eval = fb.evaluate(x);
        REQUIRE(eval.maximizer_times.size() == 1);
        REQUIRE(eval.maximizer_times[0] > 0.0);
        const Row6 grad = fb.flow_gradient(x, eval.maximizer_times[0]);
        const Row6 fd = oracle::grad_fd(value_fn, x, 1e-4);
        CHECK((grad - fd).norm() / fd.norm() <= 1e-3);
    }
}

TEST_CASE("explicit block sensitivity agrees with the integrated one") {
    SystemModel model;
    SphereConstraint c{Vec3::Zero(), 6.0};
    const InputSet box{InputShape::Box, 0.2};
    // components of the evading direction keep their signs over this arc
    const State x{Vec3(10.0, 3.0, 2.0), Vec3(-0.5, -0.1, 0.05)};
    const ClosedLoopPolicy pol = evading_policy(model, c, box);
    REQUIRE_FALSE(pol.smooth);
    const auto res = model_sensitivity(model, pol, x, 1.0, 0.001);
    CHECK((res.theta - theta_double_integrator(1.0)).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("barrier value dominates the constraint on random states") {
    SystemModel model;
    SphereConstraint c{Vec3::Zero(), 6.0};
    const double u_max = 0.2;
    for (const InputShape shape : {InputShape::Ball, InputShape::Box}) {
        FlowBarrier fb(model, c, InputSet{shape, u_max},
                       FlowBarrierConfig{0.0, 0.01, 3, 0.02, u_max});
        auto g = oracle::rng(13);
        std::uniform_real_distribution<double> rad(6.0, 30.0), spd(0.0, 1.0);
        for (int i = 0; i < 300; ++i) {
            State x;
            x.r = rad(g) * oracle::random_unit(g);
            x.v = spd(g) * oracle::random_unit(g);
            CHECK(fb.value(x) >= c.h(x) - 1e-12);
        }
    }
}

TEST_CASE("the evading input renders every barrier row nonpositive inside the set") {
    SystemModel model;
    SphereConstraint c{Vec3::Zero(), 6.0};
    const double u_max = 0.2;
    const InputSet ball{InputShape::Ball, u_max};
    FlowBarrier fb(model, c, ball, FlowBarrierConfig{0.0, 0.001, 3, 0.02, u_max});

    auto g = oracle::rng(29);
    std::uniform_real_distribution<double> rad(6.5, 20.0), spd(0.0, 0.5);
    int inside = 0;
    for (int i = 0; inside < 50 && i < 2000; ++i) {
        State x;
        x.r = rad(g) * oracle::random_unit(g);
        x.v = spd(g) * oracle::random_unit(g);
        const auto eval = fb.evaluate(x);
        if (eval.value > 0.0) continue;
        ++inside;
        const Vec3 u_star = fb.evading_input_at(x);
        for (const BarrierRow& row : eval.rows) {
            CHECK(row.lf + row.lg.dot(u_star) <= 1e-6);
        }
    }
    CHECK(inside == 50);
}

TEST_CASE("orbital oscillation yields multiple retained maximizers") {
    SystemModel model;
    model.gravity = {GravityKind::PointMass, 1.0, Vec3::Zero()};
    SphereConstraint c{Vec3::Zero(), 1.0};
    // near-circular orbit with negligible input authority: the radial
    // distance oscillates, so the propagated constraint has repeated peaks
    FlowBarrierConfig cfg{16.0, 0.01, 3, 0.5, 1.0};
    FlowBarrier fb(model, c, InputSet{InputShape::Ball, 1e-9}, cfg);
    const State x{Vec3(1.3, 0.0, 0.0), Vec3(-0.05, 0.93, 0.0)};
    const auto eval = fb.evaluate(x);
    REQUIRE(eval.maximizer_times.size() == 2);
    REQUIRE(eval.rows.size() == 2);
    // peaks sit one radial period apart at the periapsis value
    const double a_sma = 1.0 / (2.0 / 1.3 - (0.05 * 0.05 + 0.93 * 0.93));
    const double t_r = 2.0 * M_PI * std::pow(a_sma, 1.5);
    CHECK(eval.maximizer_times[1] - eval.maximizer_times[0] == doctest::Approx(t_r).epsilon(1e-3));
    CHECK(std::abs(eval.rows[0].lf - eval.rows[1].lf) <= 1e-4);
}

TEST_CASE("a horizon that cannot bracket the peak is reported") {
    SystemModel model;
    SphereConstraint c{Vec3::Zero(), 6.0};
    FlowBarrier fb(model, c, InputSet{InputShape::Ball, 0.2},
                   FlowBarrierConfig{1.0, 0.01, 3, 0.02, 0.2});  // braking needs ~4s
    const State x{Vec3(10.0, 0.0, 0.0), Vec3(-0.8, 0.0, 0.0)};
    CHECK_THROWS_AS(fb.evaluate(x), HorizonTooShortError);
}

TEST_CASE("refining the propagation step changes the value at second order") {
    SystemModel model;
    model.gravity = {GravityKind::PointMass, 0.05, Vec3::Zero()};
    SphereConstraint c{Vec3::Zero(), 6.0};
    const double u_max = 0.2;
    const State x{Vec3(9.0, 2.0, 0.0), Vec3(-0.6, 0.1, 0.0)};
    const auto value_at = [&](double dt) {
        FlowBarrier fb(model, c, InputSet{InputShape::Ball, u_max},
                       FlowBarrierConfig{0.0, dt, 3, 0.02, u_max - 0.05});
        return fb.value(x);
    };
    const double ref = value_at(0.04 / 16.0);
    const double e1 = std::abs(value_at(0.04) - ref);
    const double e2 = std::abs(value_at(0.02) - ref);
    if (e1 > 1e-12) CHECK(e2 <= 0.6 * e1);

    // widening the fit window does not move the refined peak
    FlowBarrier narrow(model, c, InputSet{InputShape::Ball, u_max},
                       FlowBarrierConfig{0.0, 0.01, 3, 0.02, u_max - 0.05});
    FlowBarrier wide(model, c, InputSet{InputShape::Ball, u_max},
                     FlowBarrierConfig{0.0, 0.01, 7, 0.02, u_max - 0.05});
    CHECK(std::abs(narrow.value(x) - wide.value(x)) <= 1e-9);
}

TEST_CASE("flow config validation") {
    FlowBarrierConfig bad{0.0, 0.01, 4, 0.02, 0.1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    FlowBarrierConfig bad2{0.0, 0.01, 3, 0.02, 0.0};
    CHECK_THROWS_AS(bad2.validate(), ConfigError);
    FlowBarrierConfig ok{0.0, 0.01, 5, 0.02, 0.1};
    CHECK_NOTHROW(ok.validate());
}
