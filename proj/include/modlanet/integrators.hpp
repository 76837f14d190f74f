#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace modlanet::integrators {

using Vec = std::vector<double>;

/// State-derivative callback: writes dz/dt into `dz`, returns false to signal
/// an unrecoverable model failure (degenerate mass matrix etc.). Non-finite
/// entries in `dz` are treated the same way.
using OdeFn = std::function<bool(double t, const Vec& z, Vec& dz)>;

enum class Method : std::uint8_t { Rk4Fixed, Dopri5Adaptive };

struct IntegratorConfig {
    Method method = Method::Dopri5Adaptive;
    double dt = 1e-3;            // fixed-step size
    double rtol = 1e-6;          // adaptive tolerances
    double atol = 1e-6;
    std::int64_t max_steps = 10'000'000;

    void validate() const;
};

struct IntegrateResult {
    std::vector<double> times;       // grid times actually reached
    std::vector<Vec> states;         // aligned with times
    bool failed = false;             // blow-up / step budget exhausted
    std::string failure_reason;
    std::int64_t steps_taken = 0;
};

/// Classical 4-stage Runge-Kutta update; local error O(dt^5).
/// Returns false when f fails or the result is non-finite.
bool rk4_step(const OdeFn& f, const Vec& z, double t, double dt, Vec& out);

/// Integrates z' = f(t, z) from z0 across `times` (strictly increasing,
/// times[0] is the initial time) and records the state at every grid time.
/// The adaptive method clips steps so grid times are hit exactly. On failure
/// the partial trajectory up to the last completed grid time is returned
/// with the failed flag set.
IntegrateResult integrate(const OdeFn& f, const Vec& z0, std::span<const double> times,
                          const IntegratorConfig& cfg);

}  // namespace modlanet::integrators
