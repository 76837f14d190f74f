#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "modlanet/integrators.hpp"
#include "modlanet/model.hpp"
#include "modlanet/systems.hpp"
#include "modlanet/training.hpp"

namespace modlanet::eval {

struct EvalConfig {
    double t_h = 30.0;    // prediction horizon, seconds
    int steps_per_s = 10; // report grid resolution
    integrators::IntegratorConfig model_integrator{integrators::Method::Dopri5Adaptive, 1e-3,
                                                   1e-6, 1e-6, 50'000};
    integrators::IntegratorConfig reference_integrator{integrators::Method::Dopri5Adaptive, 1e-3,
                                                       1e-9, 1e-9, 10'000'000};
    int threads = 1;
};

/// Smallest-magnitude representative of an angle difference, in (-pi, pi].
double wrap_angle(double d);

struct RolloutResult {
    systems::Trajectory predicted;
    systems::Trajectory reference;
    std::vector<double> times;
    std::vector<double> mse_q;  // per-time squared position error (angles wrapped)
    std::vector<double> mse_e;  // per-time squared true-energy deviation from E(z0)
    bool failed = false;        // model blow-up; series truncated
    std::string failure_reason;
    double time_avg_mse_q = 0.0;
    double time_avg_mse_e = 0.0;
};

/// Integrates the model and the ground-truth dynamics over the same grid and
/// scores the prediction. Pendulum angle errors are wrapped into (-pi, pi].
RolloutResult rollout(model::DynamicsModel& m, const systems::SystemSpec& spec,
                      const systems::State& z0, const EvalConfig& cfg);

struct EvalReport {
    std::vector<double> times;
    std::vector<double> mse_q_mean, mse_q_var, mse_e_mean, mse_e_var;
    std::vector<double> mse_q_cum_mean, mse_e_cum_mean;  // cumulative-mean framing
    std::vector<double> run_avg_mse_q, run_avg_mse_e;    // per non-failed run
    double avg_mse_q_mean = 0.0, avg_mse_q_var = 0.0;
    double avg_mse_e_mean = 0.0, avg_mse_e_var = 0.0;
    int n_runs = 0;
    int failed_runs = 0;
    bool model_failed = false;  // majority of runs blew up
};

/// n_runs seeded initial states, a rollout each, statistics over the
/// non-failed runs (failures counted separately). Deterministic per seed,
/// independent of the worker count.
EvalReport experiment(const model::DynamicsModel& m, const systems::SystemSpec& spec, int n_runs,
                      double t_h, std::uint64_t seed, const EvalConfig& cfg);

struct ExtensionReport {
    EvalReport direct;                      // strategy 1: reuse as-is
    std::optional<EvalReport> fine_tuned;   // strategy 2: after retraining
    std::optional<training::TrainReport> fine_tune_training;
};

/// Extends the trained model to `target`, evaluates it, and optionally
/// fine-tunes on `fine_tune_data` (epochs cut to a fifth of base_train)
/// before evaluating again. Fine-tuning mutates the shared parameters of
/// `base`, by design.
ExtensionReport extension_experiment(model::DynamicsModel& base,
                                     const systems::SystemSpec& target, int n_runs,
                                     std::uint64_t seed, const EvalConfig& cfg,
                                     const systems::Dataset* fine_tune_data = nullptr,
                                     const training::TrainConfig* base_train = nullptr);

/// CSV (time, mse_q_mean, mse_q_var, mse_e_mean, mse_e_var); a '#' line
/// echoes the effective config when given.
void save_report_csv(const EvalReport& report, const std::string& path,
                     const std::string& config_echo = "");
/// Companion series for accumulated-error plots (time, cumulative means).
void save_cumulative_csv(const EvalReport& report, const std::string& path);
/// Scalar summary as JSON (runs, failures, time-averaged MSE stats).
std::string report_summary_json(const EvalReport& report);

/// Optional per-run trajectory dump (JSON Lines, one state pair per line).
void dump_trajectories(const model::DynamicsModel& m, const systems::SystemSpec& spec,
                       int n_runs, std::uint64_t seed, const EvalConfig& cfg,
                       const std::string& path);

}  // namespace modlanet::eval
