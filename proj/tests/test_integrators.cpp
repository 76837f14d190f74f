#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "modlanet/integrators.hpp"
#include "modlanet/systems.hpp"

using namespace modlanet;
using namespace modlanet::integrators;

namespace {

std::vector<double> uniform_grid(double t0, double t1, int n_intervals) {
    std::vector<double> t(static_cast<std::size_t>(n_intervals) + 1);
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = t0 + (t1 - t0) * static_cast<double>(i) / n_intervals;
    return t;
}

}  // namespace

TEST_SUITE("integrators") {

TEST_CASE("rk4_step basics") {
    const OdeFn constant_one = [](double, const Vec&, Vec& dz) {
        dz.assign(1, 1.0);
        return true;
    };
    Vec out;
    REQUIRE(rk4_step(constant_one, {0.0}, 0.0, 0.1, out));
    CHECK(out[0] == doctest::Approx(0.1).epsilon(1e-15));

    const OdeFn linear = [](double, const Vec& z, Vec& dz) {
        dz = z;
        return true;
    };
    REQUIRE(rk4_step(linear, {1.0}, 0.0, 0.1, out));
    // RK4 on z' = z reproduces the 4th-order Taylor polynomial of e^h.
    const double h = 0.1;
    const double taylor = 1.0 + h + h * h / 2 + h * h * h / 6 + h * h * h * h / 24;
    CHECK(out[0] == doctest::Approx(taylor).epsilon(1e-15));
    CHECK(out[0] == doctest::Approx(1.10517083).epsilon(1e-8));

    const OdeFn zero = [](double, const Vec&, Vec& dz) {
        dz.assign(1, 0.0);
        return true;
    };
    REQUIRE(rk4_step(zero, {3.25}, 0.0, 0.5, out));
    CHECK(out[0] == 3.25);
}

TEST_CASE("rk4 global error shows order-4 convergence") {
    const OdeFn linear = [](double, const Vec& z, Vec& dz) {
        dz = z;
        return true;
    };
    auto global_error = [&](double dt) {
        IntegratorConfig cfg;
        cfg.method = Method::Rk4Fixed;
        cfg.dt = dt;
        const auto res = integrate(linear, {1.0}, uniform_grid(0.0, 1.0, 1), cfg);
        return std::abs(res.states.back()[0] - std::exp(1.0));
    };
    const double ratio = global_error(0.02) / global_error(0.01);
    CHECK(ratio >= 12.0);
    CHECK(ratio <= 20.0);
}

TEST_CASE("adaptive integration: exponential decay") {
    const OdeFn decay = [](double, const Vec& z, Vec& dz) {
        dz.assign(1, -z[0]);
        return true;
    };
    IntegratorConfig cfg;
    cfg.rtol = 1e-10;
    cfg.atol = 1e-10;
    const auto res = integrate(decay, {1.0}, uniform_grid(0.0, 1.0, 4), cfg);
    REQUIRE_FALSE(res.failed);
    REQUIRE(res.times.size() == 5);
    CHECK(res.states.back()[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-8));
}

TEST_CASE("harmonic oscillator amplitude is preserved over 100 periods") {
    const OdeFn osc = [](double, const Vec& z, Vec& dz) {
        dz = {z[1], -z[0]};
        return true;
    };
    IntegratorConfig cfg;
    cfg.rtol = 1e-9;
    cfg.atol = 1e-9;
    const double t_end = 2.0 * std::numbers::pi * 100.0;
    const auto res = integrate(osc, {1.0, 0.0}, uniform_grid(0.0, t_end, 100), cfg);
    REQUIRE_FALSE(res.failed);
    for (const auto& z : res.states) {
        const double amplitude = std::sqrt(z[0] * z[0] + z[1] * z[1]);
        CHECK(std::abs(amplitude - 1.0) < 1e-6);
    }
}

TEST_CASE("failure at t = 0 leaves only the initial state") {
    const OdeFn bad = [](double, const Vec&, Vec& dz) {
        dz.assign(1, std::nan(""));
        return true;
    };
    IntegratorConfig cfg;
    const auto res = integrate(bad, {1.0}, uniform_grid(0.0, 1.0, 10), cfg);
    CHECK(res.failed);
    CHECK(res.times.size() == 1);
    CHECK(res.failure_reason == "non-finite derivative");

    const OdeFn refuses = [](double, const Vec&, Vec&) { return false; };
    const auto res2 = integrate(refuses, {1.0}, uniform_grid(0.0, 1.0, 10), cfg);
    CHECK(res2.failed);
    CHECK(res2.times.size() == 1);
}

TEST_CASE("step budget exhaustion is reported as failure") {
    const OdeFn osc = [](double, const Vec& z, Vec& dz) {
        dz = {z[1], -z[0]};
        return true;
    };
    IntegratorConfig cfg;
    cfg.max_steps = 3;
    const auto res = integrate(osc, {1.0, 0.0}, uniform_grid(0.0, 50.0, 10), cfg);
    CHECK(res.failed);
    CHECK(res.failure_reason == "step budget exhausted");
    CHECK(res.times.size() < 11);
}

TEST_CASE("adaptive agrees with fine fixed-step RK4 on the double pendulum") {
    systems::OracleDynamics oracle(systems::SystemSpec::pendulum(2));
    const auto f = oracle.ode();
    const Vec z0 = {0.7, -0.4, 0.3, 0.1};
    const auto grid = uniform_grid(0.0, 5.0, 10);

    IntegratorConfig fine;
    fine.method = Method::Rk4Fixed;
    fine.dt = 1e-4;
    const auto ref = integrate(f, z0, grid, fine);
    REQUIRE_FALSE(ref.failed);

    IntegratorConfig adaptive;
    adaptive.rtol = 1e-9;
    adaptive.atol = 1e-9;
    const auto got = integrate(f, z0, grid, adaptive);
    REQUIRE_FALSE(got.failed);

    for (std::size_t i = 0; i < grid.size(); ++i)
        for (std::size_t d = 0; d < z0.size(); ++d)
            CHECK(testing_support::close_rel(got.states[i][d], ref.states[i][d], 1e-6, 1e-8));
}

TEST_CASE("grid validation") {
    const OdeFn zero = [](double, const Vec&, Vec& dz) {
        dz.assign(1, 0.0);
        return true;
    };
    IntegratorConfig cfg;
    const std::vector<double> bad = {0.0, 1.0, 1.0};
    CHECK_THROWS_AS((void)integrate(zero, {1.0}, bad, cfg), std::invalid_argument);
    Vec scratch;
    CHECK_THROWS_AS((void)rk4_step(zero, {1.0}, 0.0, -0.1, scratch), std::invalid_argument);
}

}  // TEST_SUITE
