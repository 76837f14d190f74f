#include "modlanet/eval.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "modlanet/threads.hpp"

#include <json.hpp>

namespace modlanet::eval {

using systems::State;
using systems::SystemKind;
using systems::SystemSpec;
using json = nlohmann::json;

double wrap_angle(double d) {
    d = std::remainder(d, 2.0 * std::numbers::pi);
    if (d <= -std::numbers::pi) d += 2.0 * std::numbers::pi;
    return d;
}

namespace {

std::vector<double> report_grid(double t_h, int steps_per_s) {
    const auto n = static_cast<std::size_t>(std::llround(t_h * steps_per_s));
    std::vector<double> grid(n + 1);
    for (std::size_t i = 0; i < grid.size(); ++i)
        grid[i] = static_cast<double>(i) / static_cast<double>(steps_per_s);
    return grid;
}

State state_at(const integrators::IntegrateResult& res, std::size_t idx, std::size_t dim) {
    State s;
    s.q.assign(res.states[idx].begin(), res.states[idx].begin() + static_cast<std::ptrdiff_t>(dim));
    s.qd.assign(res.states[idx].begin() + static_cast<std::ptrdiff_t>(dim),
                res.states[idx].end());
    return s;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

}  // namespace

RolloutResult rollout(model::DynamicsModel& m, const SystemSpec& spec, const State& z0,
                      const EvalConfig& cfg) {
    spec.validate();
    const auto dim = static_cast<std::size_t>(spec.q_dim());
    if (m.q_dim() != spec.q_dim())
        throw std::invalid_argument("rollout: model and system dimensions differ");
    const auto grid = report_grid(cfg.t_h, cfg.steps_per_s);

    std::vector<double> z(2 * dim);
    std::copy(z0.q.begin(), z0.q.end(), z.begin());
    std::copy(z0.qd.begin(), z0.qd.end(), z.begin() + static_cast<std::ptrdiff_t>(dim));

    systems::OracleDynamics oracle(spec);
    const auto ref = integrators::integrate(oracle.ode(), z, grid, cfg.reference_integrator);
    if (ref.failed)
        throw std::runtime_error("rollout: reference integration failed (" + ref.failure_reason +
                                 ")");
    const auto pred = integrators::integrate(m.ode(), z, grid, cfg.model_integrator);

    RolloutResult out;
    out.failed = pred.failed;
    out.failure_reason = pred.failure_reason;
    const double e0 = systems::total_energy(spec, z0);

    const std::size_t avail = pred.states.size();
    out.times.reserve(avail);
    out.mse_q.reserve(avail);
    out.mse_e.reserve(avail);
    for (std::size_t idx = 0; idx < avail; ++idx) {
        const State ps = state_at(pred, idx, dim);
        const State rs = state_at(ref, idx, dim);
        double acc = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = spec.kind == SystemKind::PendulumChain
                                 ? wrap_angle(ps.q[i] - rs.q[i])
                                 : ps.q[i] - rs.q[i];
            acc += d * d;
        }
        double e = 0.0;
        bool energy_ok = true;
        try {
            e = systems::total_energy(spec, ps);
        } catch (const std::domain_error&) {
            energy_ok = false;  // predicted bodies collapsed onto each other
        }
        if (!energy_ok) {
            out.failed = true;
            out.failure_reason = "predicted state left the energy domain";
            break;
        }
        if (!std::isfinite(acc) || !std::isfinite(e)) {
            out.failed = true;
            out.failure_reason = "prediction overflow";
            break;
        }
        out.times.push_back(grid[idx]);
        out.mse_q.push_back(acc / static_cast<double>(dim));
        out.mse_e.push_back((e - e0) * (e - e0));
        out.predicted.times.push_back(grid[idx]);
        out.predicted.states.push_back(ps);
        out.reference.times.push_back(grid[idx]);
        out.reference.states.push_back(rs);
    }
    out.time_avg_mse_q = mean_of(out.mse_q);
    out.time_avg_mse_e = mean_of(out.mse_e);
    return out;
}

EvalReport experiment(const model::DynamicsModel& m, const SystemSpec& spec, int n_runs,
                      double t_h, std::uint64_t seed, const EvalConfig& cfg) {
    if (n_runs < 1) throw std::invalid_argument("experiment: n_runs must be >= 1");
    EvalConfig run_cfg = cfg;
    run_cfg.t_h = t_h;

    std::vector<RolloutResult> results(static_cast<std::size_t>(n_runs));
    std::vector<std::string> errors(static_cast<std::size_t>(std::max(cfg.threads, 1)));
    parallel_chunks(n_runs, cfg.threads, [&](std::int64_t first, std::int64_t last, int w) {
        try {
            model::DynamicsModel local(m);  // own graph, shared parameters
            for (std::int64_t r = first; r < last; ++r) {
                Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(r));
                const State z0 = systems::sample_initial_state(spec, rng);
                results[static_cast<std::size_t>(r)] = rollout(local, spec, z0, run_cfg);
            }
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(w)] = e.what();
        }
    });
    for (const auto& e : errors)
        if (!e.empty()) throw std::runtime_error(e);

    EvalReport rep;
    rep.n_runs = n_runs;
    rep.times = report_grid(t_h, cfg.steps_per_s);
    const std::size_t n_times = rep.times.size();
    rep.mse_q_mean.assign(n_times, 0.0);
    rep.mse_q_var.assign(n_times, 0.0);
    rep.mse_e_mean.assign(n_times, 0.0);
    rep.mse_e_var.assign(n_times, 0.0);

    std::vector<std::vector<double>> q_at(n_times), e_at(n_times);
    for (const auto& r : results) {
        if (r.failed) {
            ++rep.failed_runs;
            continue;
        }
        rep.run_avg_mse_q.push_back(r.time_avg_mse_q);
        rep.run_avg_mse_e.push_back(r.time_avg_mse_e);
        for (std::size_t t = 0; t < n_times && t < r.mse_q.size(); ++t) {
            q_at[t].push_back(r.mse_q[t]);
            e_at[t].push_back(r.mse_e[t]);
        }
    }
    for (std::size_t t = 0; t < n_times; ++t) {
        rep.mse_q_mean[t] = mean_of(q_at[t]);
        rep.mse_q_var[t] = var_of(q_at[t]);
        rep.mse_e_mean[t] = mean_of(e_at[t]);
        rep.mse_e_var[t] = var_of(e_at[t]);
    }
    rep.mse_q_cum_mean.resize(n_times);
    rep.mse_e_cum_mean.resize(n_times);
    double cq = 0.0, ce = 0.0;
    for (std::size_t t = 0; t < n_times; ++t) {
        cq += rep.mse_q_mean[t];
        ce += rep.mse_e_mean[t];
        rep.mse_q_cum_mean[t] = cq / static_cast<double>(t + 1);
        rep.mse_e_cum_mean[t] = ce / static_cast<double>(t + 1);
    }
    rep.avg_mse_q_mean = mean_of(rep.run_avg_mse_q);
    rep.avg_mse_q_var = var_of(rep.run_avg_mse_q);
    rep.avg_mse_e_mean = mean_of(rep.run_avg_mse_e);
    rep.avg_mse_e_var = var_of(rep.run_avg_mse_e);
    rep.model_failed = 2 * rep.failed_runs > n_runs;
    return rep;
}

ExtensionReport extension_experiment(model::DynamicsModel& base, const SystemSpec& target,
                                     int n_runs, std::uint64_t seed, const EvalConfig& cfg,
                                     const systems::Dataset* fine_tune_data,
                                     const training::TrainConfig* base_train) {
    model::DynamicsModel extended = model::extend_model(base, target);
    ExtensionReport rep;
    rep.direct = experiment(extended, target, n_runs, cfg.t_h, seed, cfg);
    if (fine_tune_data != nullptr) {
        if (base_train == nullptr)
            throw std::invalid_argument(
                "extension_experiment: fine-tuning needs the base training config");
        rep.fine_tune_training =
            training::fine_tune(extended, *fine_tune_data, systems::Dataset{}, *base_train);
        rep.fine_tuned = experiment(extended, target, n_runs, cfg.t_h, seed, cfg);
    }
    return rep;
}

void save_report_csv(const EvalReport& report, const std::string& path,
                     const std::string& config_echo) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_report_csv: cannot open " + path);
    if (!config_echo.empty()) out << "# " << config_echo << '\n';
    out << "time,mse_q_mean,mse_q_var,mse_e_mean,mse_e_var\n";
    char buf[192];
    for (std::size_t t = 0; t < report.times.size(); ++t) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g\n", report.times[t],
                      report.mse_q_mean[t], report.mse_q_var[t], report.mse_e_mean[t],
                      report.mse_e_var[t]);
        out << buf;
    }
    if (!out) throw std::runtime_error("save_report_csv: write failed for " + path);
}

void save_cumulative_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_cumulative_csv: cannot open " + path);
    out << "time,mse_q_cum_mean,mse_e_cum_mean\n";
    char buf[128];
    for (std::size_t t = 0; t < report.times.size(); ++t) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", report.times[t],
                      report.mse_q_cum_mean[t], report.mse_e_cum_mean[t]);
        out << buf;
    }
}

std::string report_summary_json(const EvalReport& report) {
    json j;
    j["runs"] = report.n_runs;
    j["failed_runs"] = report.failed_runs;
    j["model_failed"] = report.model_failed;
    j["avg_mse_q"] = {{"mean", report.avg_mse_q_mean}, {"var", report.avg_mse_q_var}};
    j["avg_mse_e"] = {{"mean", report.avg_mse_e_mean}, {"var", report.avg_mse_e_var}};
    return j.dump();
}

void dump_trajectories(const model::DynamicsModel& m, const SystemSpec& spec, int n_runs,
                       std::uint64_t seed, const EvalConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("dump_trajectories: cannot open " + path);
    model::DynamicsModel local(m);
    for (int r = 0; r < n_runs; ++r) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(r));
        const State z0 = systems::sample_initial_state(spec, rng);
        const auto res = rollout(local, spec, z0, cfg);
        for (std::size_t t = 0; t < res.times.size(); ++t) {
            json line;
            line["run"] = r;
            line["t"] = res.times[t];
            line["q"] = res.predicted.states[t].q;
            line["qdot"] = res.predicted.states[t].qd;
            line["q_ref"] = res.reference.states[t].q;
            line["qdot_ref"] = res.reference.states[t].qd;
            line["failed"] = res.failed;
            out << line.dump() << '\n';
        }
    }
}

}  // namespace modlanet::eval
