#include "modlanet/integrators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace modlanet::integrators {

namespace {

bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Dormand-Prince 5(4) tableau.
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

struct Dopri5Stepper {
    const OdeFn& f;
    const IntegratorConfig& cfg;
    std::size_t dim;
    Vec k1, k2, k3, k4, k5, k6, k7, ytmp, ynew, yerr;
    bool have_k1 = false;

    Dopri5Stepper(const OdeFn& fn, const IntegratorConfig& c, std::size_t d)
        : f(fn), cfg(c), dim(d) {
        for (Vec* v : {&k1, &k2, &k3, &k4, &k5, &k6, &k7, &ytmp, &ynew, &yerr})
            v->assign(dim, 0.0);
    }

    // One attempted step of size h from (t, y). On acceptance updates y and
    // reuses k7 as the next k1 (FSAL). Returns: 0 accepted, 1 rejected
    // (shrink h), -1 hard failure.
    int try_step(double t, Vec& y, double h, double& err_norm) {
        if (!have_k1) {
            if (!f(t, y, k1) || !all_finite(k1)) return -1;
            have_k1 = true;
        }
        auto stage = [&](Vec& k, double tc, auto&&... coeff_pairs) -> bool {
            for (std::size_t i = 0; i < dim; ++i) {
                double acc = 0.0;
                ((acc += coeff_pairs.first * (*coeff_pairs.second)[i]), ...);
                ytmp[i] = y[i] + h * acc;
            }
            return f(t + tc * h, ytmp, k) && all_finite(k);
        };
        using P = std::pair<double, const Vec*>;
        if (!stage(k2, c2, P{a21, &k1})) return -1;
        if (!stage(k3, c3, P{a31, &k1}, P{a32, &k2})) return -1;
        if (!stage(k4, c4, P{a41, &k1}, P{a42, &k2}, P{a43, &k3})) return -1;
        if (!stage(k5, c5, P{a51, &k1}, P{a52, &k2}, P{a53, &k3}, P{a54, &k4})) return -1;
        if (!stage(k6, 1.0, P{a61, &k1}, P{a62, &k2}, P{a63, &k3}, P{a64, &k4}, P{a65, &k5}))
            return -1;
        for (std::size_t i = 0; i < dim; ++i)
            ynew[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
        if (!all_finite(ynew)) return -1;
        if (!f(t + h, ynew, k7) || !all_finite(k7)) return -1;
        for (std::size_t i = 0; i < dim; ++i)
            yerr[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                           e7 * k7[i]);
        double norm = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double sc = cfg.atol + cfg.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            const double r = yerr[i] / sc;
            norm += r * r;
        }
        err_norm = std::sqrt(norm / static_cast<double>(dim));
        if (!std::isfinite(err_norm)) return -1;
        if (err_norm > 1.0) return 1;
        y = ynew;
        std::swap(k1, k7);  // FSAL
        return 0;
    }
};

}  // namespace

void IntegratorConfig::validate() const {
    if (method == Method::Rk4Fixed && !(dt > 0.0))
        throw std::invalid_argument("IntegratorConfig: dt must be > 0");
    if (method == Method::Dopri5Adaptive && (!(rtol > 0.0) || !(atol > 0.0)))
        throw std::invalid_argument("IntegratorConfig: rtol/atol must be > 0");
    if (max_steps <= 0) throw std::invalid_argument("IntegratorConfig: max-step-count must be > 0");
}

bool rk4_step(const OdeFn& f, const Vec& z, double t, double dt, Vec& out) {
    if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be > 0");
    const std::size_t dim = z.size();
    Vec k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
    if (!f(t, z, k1)) return false;
    for (std::size_t i = 0; i < dim; ++i) tmp[i] = z[i] + 0.5 * dt * k1[i];
    if (!f(t + 0.5 * dt, tmp, k2)) return false;
    for (std::size_t i = 0; i < dim; ++i) tmp[i] = z[i] + 0.5 * dt * k2[i];
    if (!f(t + 0.5 * dt, tmp, k3)) return false;
    for (std::size_t i = 0; i < dim; ++i) tmp[i] = z[i] + dt * k3[i];
    if (!f(t + dt, tmp, k4)) return false;
    out.resize(dim);
    for (std::size_t i = 0; i < dim; ++i)
        out[i] = z[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return all_finite(out);
}

IntegrateResult integrate(const OdeFn& f, const Vec& z0, std::span<const double> times,
                          const IntegratorConfig& cfg) {
    cfg.validate();
    if (times.empty()) throw std::invalid_argument("integrate: empty time grid");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1]))
            throw std::invalid_argument("integrate: times must be strictly increasing");

    IntegrateResult res;
    res.times.push_back(times[0]);
    res.states.push_back(z0);
    if (!all_finite(z0)) {
        res.failed = true;
        res.failure_reason = "non-finite initial state";
        return res;
    }

    Vec y = z0;
    const std::size_t dim = z0.size();

    if (cfg.method == Method::Rk4Fixed) {
        Vec next(dim);
        for (std::size_t g = 1; g < times.size(); ++g) {
            const double span = times[g] - times[g - 1];
            const auto nsub = static_cast<std::int64_t>(std::ceil(span / cfg.dt - 1e-12));
            const double h = span / static_cast<double>(std::max<std::int64_t>(nsub, 1));
            double t = times[g - 1];
            for (std::int64_t s = 0; s < std::max<std::int64_t>(nsub, 1); ++s) {
                if (++res.steps_taken > cfg.max_steps) {
                    res.failed = true;
                    res.failure_reason = "step budget exhausted";
                    return res;
                }
                if (!rk4_step(f, y, t, h, next)) {
                    res.failed = true;
                    res.failure_reason = "non-finite derivative";
                    return res;
                }
                y = next;
                t += h;
            }
            res.times.push_back(times[g]);
            res.states.push_back(y);
        }
        return res;
    }

    Dopri5Stepper stepper(f, cfg, dim);
    double t = times[0];
    double h = 0.0;  // chosen on first step
    for (std::size_t g = 1; g < times.size(); ++g) {
        const double t_target = times[g];
        if (h <= 0.0) h = (t_target - t) * 0.1;
        while (t < t_target - 1e-12 * std::max(1.0, std::abs(t_target))) {
            bool clipped = false;
            double h_try = h;
            if (t + h_try >= t_target) {
                h_try = t_target - t;
                clipped = true;
            }
            if (++res.steps_taken > cfg.max_steps) {
                res.failed = true;
                res.failure_reason = "step budget exhausted";
                return res;
            }
            double err = 0.0;
            const int rc = stepper.try_step(t, y, h_try, err);
            if (rc < 0) {
                res.failed = true;
                res.failure_reason = "non-finite derivative";
                return res;
            }
            const double safety = 0.9, min_fac = 0.2, max_fac = 5.0;
            const double fac = err > 0.0
                                   ? std::clamp(safety * std::pow(err, -0.2), min_fac, max_fac)
                                   : max_fac;
            if (rc == 0) {
                t = clipped ? t_target : t + h_try;
                h = h_try * fac;
            } else {
                h = h_try * std::min(fac, 0.9);
                if (!(h > 1e-14 * std::max(1.0, std::abs(t)))) {
                    res.failed = true;
                    res.failure_reason = "step size underflow";
                    return res;
                }
            }
        }
        t = t_target;
        res.times.push_back(t_target);
        res.states.push_back(y);
    }
    return res;
}

}  // namespace modlanet::integrators
