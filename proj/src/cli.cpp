#include "modlanet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "modlanet/eval.hpp"
#include "modlanet/model.hpp"
#include "modlanet/systems.hpp"
#include "modlanet/threads.hpp"
#include "modlanet/training.hpp"

#include <json.hpp>

namespace modlanet::cli {

using json = nlohmann::json;
using systems::SystemKind;
using systems::SystemSpec;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json parse_config(const std::string& text, const std::set<std::string>& allowed) {
    json cfg;
    try {
        cfg = text.empty() ? json::object() : json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, _] : cfg.items())
        if (!allowed.count(key)) throw ConfigError("unknown config key: " + key);
    return cfg;
}

template <typename T>
T get_or(const json& cfg, const std::string& key, T fallback) {
    if (!cfg.contains(key)) return fallback;
    try {
        return cfg.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

std::string require_string(const json& cfg, const std::string& key) {
    if (!cfg.contains(key)) throw ConfigError("missing required config key: " + key);
    try {
        return cfg.at(key).get<std::string>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' must be a string");
    }
}

SystemSpec spec_from_config(const json& cfg) {
    const std::string system = require_string(cfg, "system");
    const int n = get_or<int>(cfg, "n", system == "pend" ? 2 : 3);
    if (n < 1) throw ConfigError("n must be >= 1");
    if (system == "pend") return SystemSpec::pendulum(n, get_or<double>(cfg, "g", 9.8));
    if (system == "body") return SystemSpec::bodies(n, get_or<double>(cfg, "G", 1.0));
    throw ConfigError("system must be 'pend' or 'body'");
}

SystemSpec parse_target(const std::string& target) {
    const auto colon = target.find(':');
    if (colon == std::string::npos)
        throw ConfigError("target must look like 'pend:4' or 'body:6'");
    const std::string kind = target.substr(0, colon);
    const int n = std::atoi(target.c_str() + colon + 1);
    if (n < 1) throw ConfigError("target element count must be >= 1");
    if (kind == "pend") return SystemSpec::pendulum(n);
    if (kind == "body") return SystemSpec::bodies(n);
    throw ConfigError("target system must be 'pend' or 'body'");
}

model::ModelConfig model_config_for(const std::string& name, const SystemSpec& spec) {
    if (name == "modlanet" || name == "modular") return model::default_modular_config(spec);
    if (name == "baseline" || name == "direct-mlp") return model::default_baseline_config(spec);
    if (name == "monolithic" || name == "lnn-style")
        return model::default_monolithic_config(spec);
    throw ConfigError("model must be one of: modlanet, baseline, monolithic");
}

double dataset_energy_drift(const systems::Dataset& ds) {
    // Reintegrate one trajectory's worth of grid from the first sample's
    // state and track the energy.
    if (ds.samples.empty()) return 0.0;
    systems::OracleDynamics oracle(ds.spec);
    const auto dim = static_cast<std::size_t>(ds.spec.q_dim());
    const auto& first = ds.samples.front();
    std::vector<double> z(2 * dim);
    std::copy(first.state.q.begin(), first.state.q.end(), z.begin());
    std::copy(first.state.qd.begin(), first.state.qd.end(),
              z.begin() + static_cast<std::ptrdiff_t>(dim));
    std::vector<double> grid(101);
    for (std::size_t i = 0; i < grid.size(); ++i)
        grid[i] = ds.t_g * static_cast<double>(i) / 100.0;
    integrators::IntegratorConfig icfg;
    icfg.rtol = 1e-9;
    icfg.atol = 1e-9;
    const auto res = integrators::integrate(oracle.ode(), z, grid, icfg);
    if (res.failed) return std::nan("");
    const double e0 = systems::total_energy(ds.spec, first.state);
    double worst = 0.0;
    for (const auto& zs : res.states) {
        systems::State s;
        s.q.assign(zs.begin(), zs.begin() + static_cast<std::ptrdiff_t>(dim));
        s.qd.assign(zs.begin() + static_cast<std::ptrdiff_t>(dim), zs.end());
        worst = std::max(worst,
                         std::abs(systems::total_energy(ds.spec, s) - e0) /
                             std::max(std::abs(e0), 1e-12));
    }
    return worst;
}

training::TrainConfig train_config_from(const json& cfg) {
    training::TrainConfig tc;
    tc.lr = get_or<double>(cfg, "lr", 1e-3);
    tc.epochs = get_or<int>(cfg, "epochs", 2000);
    tc.batch_size = get_or<int>(cfg, "batch", 256);
    tc.seed = get_or<std::uint64_t>(cfg, "seed", 0);
    tc.clip_norm = get_or<double>(cfg, "clip_norm", 10.0);
    tc.threads = resolve_threads(get_or<int>(cfg, "threads", 0));
    const std::string loss = get_or<std::string>(cfg, "loss", "l2");
    if (loss == "l2") tc.loss = training::LossKind::L2Norm;
    else if (loss == "l1") tc.loss = training::LossKind::L1;
    else throw ConfigError("loss must be 'l2' or 'l1'");
    tc.validate();
    return tc;
}

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

int cmd_gen(const std::string& config_json) {
    return guarded([&] {
        const json cfg = parse_config(config_json,
                                      {"system", "n", "samples", "seed", "t_g", "steps", "g", "G",
                                       "out", "threads", "traj"});
        const SystemSpec spec = spec_from_config(cfg);
        const std::string out = require_string(cfg, "out");
        const double t_g = get_or<double>(cfg, "t_g", 10.0);
        const int steps =
            get_or<int>(cfg, "steps", spec.kind == SystemKind::PendulumChain ? 10 : 20);
        const auto seed = get_or<std::uint64_t>(cfg, "seed", 0);
        const int threads = resolve_threads(get_or<int>(cfg, "threads", 0));
        if (!(t_g > 0.0)) throw ConfigError("t_g must be > 0");
        if (steps < 1) throw ConfigError("steps must be >= 1");

        const auto per_traj = static_cast<std::int64_t>(std::llround(t_g * steps));
        std::int64_t samples = get_or<std::int64_t>(cfg, "samples", -1);
        std::int64_t n_traj = get_or<std::int64_t>(cfg, "traj", -1);
        if (samples < 0 && n_traj < 0) throw ConfigError("one of samples/traj is required");
        if (n_traj < 0) n_traj = (samples + per_traj - 1) / per_traj;
        if (samples < 0) samples = n_traj * per_traj;

        auto ds = systems::generate_dataset(spec, static_cast<int>(n_traj), t_g, steps, seed,
                                            threads);
        if (static_cast<std::int64_t>(ds.samples.size()) > samples)
            ds.samples.resize(static_cast<std::size_t>(samples));
        systems::save_dataset(ds, out, cfg.dump());
        const double drift = dataset_energy_drift(ds);
        std::printf("wrote %zu samples to %s (trajectories %lld, resampled %d)\n",
                    ds.samples.size(), out.c_str(), static_cast<long long>(n_traj),
                    ds.resampled);
        std::printf("energy drift on probe trajectory: %.3g\n", drift);
        return kOk;
    });
}

int cmd_train(const std::string& config_json) {
    return guarded([&] {
        const json cfg = parse_config(config_json,
                                      {"data", "model", "epochs", "lr", "batch", "seed", "loss",
                                       "clip_norm", "threads", "out", "report", "test_data",
                                       "el_epsilon", "model_seed"});
        const std::string data_path = require_string(cfg, "data");
        const std::string out = require_string(cfg, "out");
        const std::string report_path = get_or<std::string>(cfg, "report", "");
        const auto ds = systems::load_dataset(data_path);
        const auto tc = train_config_from(cfg);

        auto mc = model_config_for(get_or<std::string>(cfg, "model", "modlanet"), ds.spec);
        if (cfg.contains("el_epsilon")) mc.el_epsilon = cfg.at("el_epsilon").get<double>();
        const auto model_seed = get_or<std::uint64_t>(cfg, "model_seed", tc.seed);
        auto m = model::DynamicsModel::initialize(mc, model_seed);
        std::printf("model %s: %lld parameters\n", model::model_kind_name(mc.kind),
                    static_cast<long long>(m.param_count()));

        systems::Dataset test;
        if (cfg.contains("test_data")) {
            test = systems::load_dataset(cfg.at("test_data").get<std::string>());
        } else {
            // independent test set sized at a tenth of the training data
            const int test_traj = std::max(1, ds.n_traj / 10);
            test = systems::generate_dataset(ds.spec, test_traj, ds.t_g, ds.steps_per_s,
                                             Rng::stream(ds.seed, 0x7E57).next_u64(), tc.threads);
        }

        training::TrainConfig tc_live = tc;
        const int stride = std::max(1, tc.epochs / 50);
        tc_live.on_epoch = [&](int epoch, double train_l, double test_l, double secs) {
            if (epoch % stride == 0 || epoch == tc.epochs) {
                std::printf("epoch %5d  train %.6g  test %.6g  (%.0f s)\n", epoch, train_l,
                            test_l, secs);
                std::fflush(stdout);
            }
        };
        const auto report = training::train(m, ds, test, tc_live);
        json meta;
        meta["epochs"] = tc.epochs;
        meta["epochs_run"] = report.epochs_run;
        meta["lr"] = tc.lr;
        meta["batch"] = tc.batch_size;
        meta["seed"] = tc.seed;
        meta["loss"] = tc.loss == training::LossKind::L2Norm ? "l2" : "l1";
        meta["dataset"] = data_path;
        meta["final_train_loss"] = report.final_train_loss();
        meta["final_test_loss"] = report.final_test_loss();
        meta["diverged"] = report.diverged;
        model::save_checkpoint(m, out, tc.seed, meta.dump(), cfg.dump());
        if (!report_path.empty()) training::save_report_csv(report, report_path, cfg.dump());
        std::printf("final train loss %.6g, test loss %.6g%s\n", report.final_train_loss(),
                    report.final_test_loss(), report.diverged ? " (diverged)" : "");
        std::printf("checkpoint written to %s\n", out.c_str());
        return report.diverged ? kDiverged : kOk;
    });
}

namespace {

void write_eval_outputs(const eval::EvalReport& rep, const std::string& out,
                        const std::string& echo) {
    eval::save_report_csv(rep, out, echo);
    const auto stem = std::filesystem::path(out).replace_extension();
    eval::save_cumulative_csv(rep, stem.string() + "_cumulative.csv");
    std::ofstream summary(stem.string() + "_summary.json");
    summary << eval::report_summary_json(rep) << '\n';
    std::printf("runs %d, failed %d%s\n", rep.n_runs, rep.failed_runs,
                rep.model_failed ? " (model failed)" : "");
    std::printf("time-averaged MSE_q %.6g (var %.3g), MSE_E %.6g (var %.3g)\n",
                rep.avg_mse_q_mean, rep.avg_mse_q_var, rep.avg_mse_e_mean, rep.avg_mse_e_var);
}

}  // namespace

int cmd_eval(const std::string& config_json) {
    return guarded([&] {
        const json cfg = parse_config(config_json, {"ckpt", "runs", "t_h", "seed", "steps",
                                                    "threads", "out", "rtol", "atol",
                                                    "dump_traj"});
        const std::string ckpt_path = require_string(cfg, "ckpt");
        const std::string out = require_string(cfg, "out");
        auto ck = model::load_checkpoint(ckpt_path);
        eval::EvalConfig ecfg;
        ecfg.t_h = get_or<double>(cfg, "t_h", 30.0);
        ecfg.steps_per_s = get_or<int>(cfg, "steps", 10);
        ecfg.model_integrator.rtol = get_or<double>(cfg, "rtol", 1e-6);
        ecfg.model_integrator.atol = get_or<double>(cfg, "atol", 1e-6);
        ecfg.threads = resolve_threads(get_or<int>(cfg, "threads", 0));
        const int runs = get_or<int>(cfg, "runs", 100);
        const auto seed = get_or<std::uint64_t>(cfg, "seed", 0);
        const auto rep =
            eval::experiment(ck.model, ck.model.config().system, runs, ecfg.t_h, seed, ecfg);
        write_eval_outputs(rep, out, cfg.dump());
        if (cfg.contains("dump_traj"))
            eval::dump_trajectories(ck.model, ck.model.config().system,
                                    std::min(runs, 10), seed, ecfg,
                                    cfg.at("dump_traj").get<std::string>());
        return kOk;
    });
}

int cmd_extend(const std::string& config_json) {
    return guarded([&] {
        const json cfg = parse_config(config_json,
                                      {"ckpt", "target", "runs", "t_h", "seed", "steps",
                                       "threads", "out", "rtol", "atol", "fine_tune", "data",
                                       "epochs_base", "lr", "batch"});
        const std::string ckpt_path = require_string(cfg, "ckpt");
        const std::string out = require_string(cfg, "out");
        const SystemSpec target = parse_target(require_string(cfg, "target"));
        auto ck = model::load_checkpoint(ckpt_path);
        eval::EvalConfig ecfg;
        ecfg.t_h = get_or<double>(cfg, "t_h", 10.0);
        ecfg.steps_per_s = get_or<int>(cfg, "steps", 10);
        ecfg.model_integrator.rtol = get_or<double>(cfg, "rtol", 1e-6);
        ecfg.model_integrator.atol = get_or<double>(cfg, "atol", 1e-6);
        ecfg.threads = resolve_threads(get_or<int>(cfg, "threads", 0));
        const int runs = get_or<int>(cfg, "runs", 100);
        const auto seed = get_or<std::uint64_t>(cfg, "seed", 0);
        const bool fine_tune = get_or<bool>(cfg, "fine_tune", false);

        systems::Dataset tune_data;
        training::TrainConfig base_train;
        if (fine_tune) {
            if (!cfg.contains("data"))
                throw ConfigError("--fine-tune needs --data with the extension dataset");
            tune_data = systems::load_dataset(cfg.at("data").get<std::string>());
            const json meta = json::parse(ck.train_meta_json.empty() ? "{}" : ck.train_meta_json);
            base_train.epochs = get_or<int>(cfg, "epochs_base", meta.value("epochs", 2000));
            base_train.lr = get_or<double>(cfg, "lr", meta.value("lr", 1e-3));
            base_train.batch_size = get_or<int>(cfg, "batch", meta.value("batch", 256));
            base_train.seed = seed;
            base_train.threads = ecfg.threads;
            base_train.validate();
        }
        const auto rep = eval::extension_experiment(ck.model, target, runs, seed, ecfg,
                                                    fine_tune ? &tune_data : nullptr,
                                                    fine_tune ? &base_train : nullptr);
        std::printf("strategy 1 (direct extension):\n");
        write_eval_outputs(rep.direct, out, cfg.dump());
        if (rep.fine_tuned) {
            const auto stem = std::filesystem::path(out).replace_extension();
            std::printf("strategy 2 (after fine-tuning, %d epochs):\n",
                        rep.fine_tune_training->epochs_run);
            write_eval_outputs(*rep.fine_tuned, stem.string() + "_finetuned.csv", cfg.dump());
            if (rep.fine_tune_training->diverged) return kDiverged;
        }
        return kOk;
    });
}

namespace {

bool suite_fd_gradient() {
    Rng rng(90210);
    for (int trial = 0; trial < 25; ++trial) {
        autodiff::Graph g;
        const auto x = g.input();
        const auto y = g.input();
        const auto expr = g.add(g.mul(g.sin(x), g.softplus(y)),
                                g.mul(g.tanh(g.mul(x, y)), g.exp(g.mul(g.constant(0.3), x))));
        const std::vector<autodiff::NodeId> wrt = {x, y};
        const auto grads = g.grad(expr, wrt);
        const auto H = g.hessian(expr, wrt);
        const double x0 = rng.uniform(-1.5, 1.5), y0 = rng.uniform(-1.5, 1.5);
        const auto eval_expr = [&](double xv, double yv) {
            g.set_input(x, xv);
            g.set_input(y, yv);
            return g.evaluate(expr);
        };
        const double h = 1e-5;
        const double fdx = (eval_expr(x0 + h, y0) - eval_expr(x0 - h, y0)) / (2 * h);
        g.set_input(x, x0);
        g.set_input(y, y0);
        const double gx = g.evaluate(grads[0]);
        if (std::abs(gx - fdx) > 1e-5 * std::max(std::abs(gx), std::abs(fdx)) + 1e-8)
            return false;
        const auto eval_gy = [&](double xv) {
            g.set_input(x, xv);
            g.set_input(y, y0);
            return g.evaluate(grads[1]);
        };
        const double fdxy = (eval_gy(x0 + h) - eval_gy(x0 - h)) / (2 * h);
        g.set_input(x, x0);
        const double hxy = g.evaluate(H[0][1]);
        if (std::abs(hxy - fdxy) > 1e-4 * std::max(std::abs(hxy), std::abs(fdxy)) + 1e-6)
            return false;
    }
    return true;
}

bool suite_el_oracle(const SystemSpec& spec, int states) {
    systems::OracleDynamics oracle(spec);
    for (int trial = 0; trial < states; ++trial) {
        Rng rng = Rng::stream(1234, static_cast<std::uint64_t>(trial));
        const auto s = systems::sample_initial_state(spec, rng);
        std::vector<double> a(s.q.size(), 0.0);
        if (!oracle.accel(s.q, s.qd, a)) return false;
        const auto e = systems::newtonian_accel(spec, s);
        for (std::size_t i = 0; i < a.size(); ++i)
            if (std::abs(a[i] - e[i]) > 1e-8 * std::max(std::abs(a[i]), std::abs(e[i])) + 1e-10)
                return false;
    }
    return true;
}

bool suite_energy_drift(const SystemSpec& spec) {
    systems::OracleDynamics oracle(spec);
    Rng rng(55);
    const auto z0 = systems::sample_initial_state(spec, rng);
    const auto dim = static_cast<std::size_t>(spec.q_dim());
    std::vector<double> z(2 * dim);
    std::copy(z0.q.begin(), z0.q.end(), z.begin());
    std::copy(z0.qd.begin(), z0.qd.end(), z.begin() + static_cast<std::ptrdiff_t>(dim));
    std::vector<double> grid(301);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.1 * static_cast<double>(i);
    integrators::IntegratorConfig icfg;
    icfg.rtol = 1e-9;
    icfg.atol = 1e-9;
    const auto res = integrators::integrate(oracle.ode(), z, grid, icfg);
    if (res.failed) return false;
    const double e0 = systems::total_energy(spec, z0);
    for (const auto& zs : res.states) {
        systems::State s;
        s.q.assign(zs.begin(), zs.begin() + static_cast<std::ptrdiff_t>(dim));
        s.qd.assign(zs.begin() + static_cast<std::ptrdiff_t>(dim), zs.end());
        if (std::abs(systems::total_energy(spec, s) - e0) >
            1e-6 * std::max(std::abs(e0), 1e-12))
            return false;
    }
    return true;
}

bool suite_equivariance(int n) {
    const auto spec = SystemSpec::bodies(n);
    auto m = model::DynamicsModel::initialize(model::default_modular_config(spec), 99);
    Rng rng(12);
    std::vector<std::size_t> perm(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i + 1) % perm.size();
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> q(static_cast<std::size_t>(2 * n)), qd(q.size());
        for (auto& v : q) v = rng.uniform(-1.5, 1.5);
        for (auto& v : qd) v = rng.uniform(-1.0, 1.0);
        std::vector<double> qp(q.size()), qdp(q.size());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            qp[2 * i] = q[2 * perm[i]];
            qp[2 * i + 1] = q[2 * perm[i] + 1];
            qdp[2 * i] = qd[2 * perm[i]];
            qdp[2 * i + 1] = qd[2 * perm[i] + 1];
        }
        std::vector<double> a(q.size(), 0.0), ap(q.size(), 0.0);
        if (!m.forward(q, qd, a) || !m.forward(qp, qdp, ap)) return false;
        for (std::size_t i = 0; i < perm.size(); ++i) {
            if (std::abs(ap[2 * i] - a[2 * perm[i]]) > 1e-12) return false;
            if (std::abs(ap[2 * i + 1] - a[2 * perm[i] + 1]) > 1e-12) return false;
        }
    }
    return true;
}

}  // namespace

int cmd_check(const std::string& config_json) {
    return guarded([&] {
        const json cfg = parse_config(config_json, {"suite", "system", "n", "threads"});
        const std::string suite = get_or<std::string>(cfg, "suite", "all");
        const std::set<std::string> known = {"all", "fd-gradient", "el-oracle", "energy-drift",
                                             "equivariance"};
        if (!known.count(suite)) throw ConfigError("unknown suite: " + suite);

        std::vector<SystemSpec> specs;
        if (cfg.contains("system")) {
            specs.push_back(spec_from_config(cfg));
        } else {
            specs.push_back(SystemSpec::pendulum(2));
            specs.push_back(SystemSpec::bodies(3));
        }

        bool all_ok = true;
        const auto report = [&](const std::string& name, bool ok) {
            std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name.c_str());
            all_ok = all_ok && ok;
        };
        if (suite == "all" || suite == "fd-gradient")
            report("fd-gradient", suite_fd_gradient());
        if (suite == "all" || suite == "el-oracle")
            for (const auto& s : specs)
                report("el-oracle " + s.kind_name() + ":" + std::to_string(s.n),
                       suite_el_oracle(s, 200));
        if (suite == "all" || suite == "energy-drift")
            for (const auto& s : specs)
                report("energy-drift " + s.kind_name() + ":" + std::to_string(s.n),
                       suite_energy_drift(s));
        if (suite == "all" || suite == "equivariance")
            report("equivariance",
                   suite_equivariance(cfg.contains("system") &&
                                              specs.front().kind == SystemKind::GravityBodies
                                          ? specs.front().n
                                          : 4));
        return all_ok ? kOk : kSuiteFailure;
    });
}

int run_command(const std::string& command, const std::string& config_json) {
    if (command == "gen") return cmd_gen(config_json);
    if (command == "train") return cmd_train(config_json);
    if (command == "eval") return cmd_eval(config_json);
    if (command == "extend") return cmd_extend(config_json);
    if (command == "check") return cmd_check(config_json);
    std::cerr << "config error: unknown command " << command << '\n';
    return kConfigError;
}

}  // namespace modlanet::cli
