#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "modlanet/autodiff.hpp"
#include "modlanet/integrators.hpp"
#include "modlanet/rng.hpp"

namespace modlanet::systems {

using Vec = std::vector<double>;

enum class SystemKind : std::uint8_t { PendulumChain, GravityBodies };

/// Ground-truth physical system. Pendulum chains use angles measured from
/// the downward vertical with element i suspended from element i-1; gravity
/// systems are planar point masses under mutual attraction.
struct SystemSpec {
    SystemKind kind = SystemKind::PendulumChain;
    int n = 1;
    Vec masses;   // kg, defaults to 1 per element
    Vec lengths;  // m, pendulum only, defaults to 1
    double g = 9.8;  // m/s^2, pendulum only
    double G = 1.0;  // gravitational constant, bodies only

    static SystemSpec pendulum(int n, double g = 9.8);
    static SystemSpec bodies(int n, double G = 1.0);

    void validate() const;
    int q_dim() const { return kind == SystemKind::PendulumChain ? n : 2 * n; }
    std::string kind_name() const;
};

SystemKind kind_from_name(const std::string& name);

struct State {
    Vec q;
    Vec qd;
};

struct Sample {
    State state;
    Vec qddot;
    double t = 0.0;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<State> states;
};

struct Dataset {
    SystemSpec spec;
    std::vector<Sample> samples;
    std::uint64_t seed = 0;
    double t_g = 10.0;
    int steps_per_s = 10;
    int n_traj = 0;
    int resampled = 0;  // trajectories regenerated after integrator failure
};

/// Emits the closed-form Lagrangian of the system into a graph.
/// Chain: sum_i m_i [ sum_{j<=i} (l_j^2 th_j'^2/2 + g l_j cos th_j)
///                    + sum_{j<k<=i} l_j l_k th_j' th_k' cos(th_j - th_k) ].
/// Bodies: sum_i m_i |v_i|^2 / 2 + sum_{i<j} G m_i m_j / r_ij.
autodiff::NodeId analytic_lagrangian(autodiff::Graph& g, const SystemSpec& spec,
                                     std::span<const autodiff::NodeId> q,
                                     std::span<const autodiff::NodeId> qd);

/// The dataset-generating dynamics: Euler-Lagrange acceleration of the
/// analytic Lagrangian with zero Hessian regularization, compiled once.
class OracleDynamics {
public:
    explicit OracleDynamics(const SystemSpec& spec);
    bool accel(std::span<const double> q, std::span<const double> qd, std::span<double> out);
    /// z = [q, qd] -> dz = [qd, accel].
    integrators::OdeFn ode();
    const SystemSpec& spec() const { return spec_; }

private:
    SystemSpec spec_;
    autodiff::CompiledLagrangian compiled_;
};

/// One-shot oracle acceleration; throws on domain errors (coincident bodies).
Vec oracle_accel(const SystemSpec& spec, const State& state);

/// Independent closed-form accelerations that never touch the autodiff path:
/// direct Newtonian force sums for bodies, hand-derived mass-matrix equations
/// of motion for the chain.
Vec newtonian_accel(const SystemSpec& spec, const State& state);

/// Total mechanical energy E = T + U (chain U = -sum c_j g l_j cos th_j,
/// bodies U = -sum G m_i m_j / r_ij).
double total_energy(const SystemSpec& spec, const State& state);

/// Global Cartesian joint positions of a pendulum chain (root at origin).
std::vector<std::array<double, 2>> pendulum_positions(const SystemSpec& spec, const Vec& q);

/// Chain: th ~ U(-pi, pi), th' ~ U(-2, 2). Bodies: positions on an annulus
/// of radius U(0.9, 1.2) recentered to the barycenter, tangential
/// near-circular velocities perturbed by U(-10%, +10%) and recentered to
/// zero total momentum.
State sample_initial_state(const SystemSpec& spec, Rng& rng);

/// Integrates `n_traj` oracle trajectories over a uniform grid and records
/// (state, qddot) at every grid point except the final one, then shuffles.
/// Trajectories whose integration fails are discarded and resampled.
Dataset generate_dataset(const SystemSpec& spec, int n_traj, double t_g, int steps_per_s,
                         std::uint64_t seed, int threads = 1);

/// JSON Lines: a header object with spec + seed + grid metadata (plus an
/// optional effective-config echo), then one sample object per line.
void save_dataset(const Dataset& ds, const std::string& path,
                  const std::string& config_echo = "");
Dataset load_dataset(const std::string& path);

std::string spec_to_json_string(const SystemSpec& spec);
SystemSpec spec_from_json_string(const std::string& text);

}  // namespace modlanet::systems
