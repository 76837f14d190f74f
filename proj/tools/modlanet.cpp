// Command-line front end: gen -> train -> eval / extend, plus the on-demand
// verification suites. Flags override keys from --config; the merged config
// is what the commands validate and echo into their artifacts.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "modlanet/cli.hpp"

using json = nlohmann::json;

namespace {

struct CommandArgs {
    std::string config_path;
    json flags = json::object();

    std::string merged() const {
        json cfg = json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) {
                std::cerr << "config error: cannot open " << config_path << '\n';
                std::exit(modlanet::cli::kConfigError);
            }
            try {
                in >> cfg;
            } catch (const json::exception& e) {
                std::cerr << "config error: " << e.what() << '\n';
                std::exit(modlanet::cli::kConfigError);
            }
        }
        for (const auto& [k, v] : flags.items()) cfg[k] = v;
        return cfg.dump();
    }
};

void add_common(CLI::App* sub, CommandArgs& args) {
    sub->add_option("--config", args.config_path, "JSON config file (flags override its keys)");
    sub->add_option_function<int>(
        "--threads", [&args](int v) { args.flags["threads"] = v; },
        "worker threads (default: MODLANET_THREADS or hardware)");
}

void opt_str(CLI::App* sub, CommandArgs& args, const std::string& flag, const std::string& key,
             const std::string& desc) {
    sub->add_option_function<std::string>(
        flag, [&args, key](const std::string& v) { args.flags[key] = v; }, desc);
}

void opt_int(CLI::App* sub, CommandArgs& args, const std::string& flag, const std::string& key,
             const std::string& desc) {
    sub->add_option_function<std::int64_t>(
        flag, [&args, key](std::int64_t v) { args.flags[key] = v; }, desc);
}

void opt_double(CLI::App* sub, CommandArgs& args, const std::string& flag, const std::string& key,
                const std::string& desc) {
    sub->add_option_function<double>(
        flag, [&args, key](double v) { args.flags[key] = v; }, desc);
}

void opt_flag(CLI::App* sub, CommandArgs& args, const std::string& flag, const std::string& key,
              const std::string& desc) {
    sub->add_flag_function(
        flag, [&args, key](std::int64_t count) { args.flags[key] = count > 0; }, desc);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"modlanet: modular Lagrangian dynamics learning"};
    app.require_subcommand(1);

    CommandArgs gen_args, train_args, eval_args, extend_args, check_args;

    auto* gen = app.add_subcommand("gen", "generate a dataset from the analytic dynamics");
    add_common(gen, gen_args);
    opt_str(gen, gen_args, "--system", "system", "pend | body");
    opt_int(gen, gen_args, "--n", "n", "element count");
    opt_int(gen, gen_args, "--samples", "samples", "total sample count");
    opt_int(gen, gen_args, "--traj", "traj", "trajectory count (alternative to --samples)");
    opt_int(gen, gen_args, "--seed", "seed", "generation seed");
    opt_double(gen, gen_args, "--t-g", "t_g", "trajectory length in seconds (default 10)");
    opt_int(gen, gen_args, "--steps", "steps", "grid points per second (default 10 pend / 20 body)");
    opt_double(gen, gen_args, "--g", "g", "gravitational acceleration (pendulum)");
    opt_double(gen, gen_args, "--G", "G", "gravitational constant (bodies)");
    opt_str(gen, gen_args, "--out", "out", "output dataset (JSON Lines)");

    auto* train = app.add_subcommand("train", "train a model on a dataset");
    add_common(train, train_args);
    opt_str(train, train_args, "--data", "data", "training dataset path");
    opt_str(train, train_args, "--test-data", "test_data",
            "test dataset path (default: generated, a tenth of the training size)");
    opt_str(train, train_args, "--model", "model", "modlanet | baseline | monolithic");
    opt_int(train, train_args, "--epochs", "epochs", "training epochs (default 2000)");
    opt_double(train, train_args, "--lr", "lr", "learning rate in [1e-4, 1e-1] (default 1e-3)");
    opt_int(train, train_args, "--batch", "batch", "mini-batch size (default 256)");
    opt_int(train, train_args, "--seed", "seed", "training seed");
    opt_int(train, train_args, "--model-seed", "model_seed", "initialization seed (default: seed)");
    opt_str(train, train_args, "--loss", "loss", "l2 | l1 (default l2)");
    opt_double(train, train_args, "--clip-norm", "clip_norm", "gradient norm cap (default 10)");
    opt_double(train, train_args, "--el-epsilon", "el_epsilon",
               "mass-matrix regularization override");
    opt_str(train, train_args, "--out", "out", "checkpoint output path");
    opt_str(train, train_args, "--report", "report", "loss CSV output path");

    auto* evalc = app.add_subcommand("eval", "multi-step prediction experiment");
    add_common(evalc, eval_args);
    opt_str(evalc, eval_args, "--ckpt", "ckpt", "checkpoint path");
    opt_int(evalc, eval_args, "--runs", "runs", "number of rollouts (default 100)");
    opt_double(evalc, eval_args, "--t-h", "t_h", "prediction horizon in seconds (default 30)");
    opt_int(evalc, eval_args, "--steps", "steps", "report grid per second (default 10)");
    opt_int(evalc, eval_args, "--seed", "seed", "initial-state seed");
    opt_double(evalc, eval_args, "--rtol", "rtol", "rollout solver rtol (default 1e-6)");
    opt_double(evalc, eval_args, "--atol", "atol", "rollout solver atol (default 1e-6)");
    opt_str(evalc, eval_args, "--out", "out", "report CSV path");
    opt_str(evalc, eval_args, "--dump-traj", "dump_traj", "trajectory dump path (JSON Lines)");

    auto* extend = app.add_subcommand("extend", "reuse a trained model on a larger system");
    add_common(extend, extend_args);
    opt_str(extend, extend_args, "--ckpt", "ckpt", "checkpoint path");
    opt_str(extend, extend_args, "--target", "target", "target system, e.g. pend:4 or body:6");
    opt_int(extend, extend_args, "--runs", "runs", "number of rollouts (default 100)");
    opt_double(extend, extend_args, "--t-h", "t_h", "prediction horizon (default 10)");
    opt_int(extend, extend_args, "--steps", "steps", "report grid per second (default 10)");
    opt_int(extend, extend_args, "--seed", "seed", "initial-state seed");
    opt_double(extend, extend_args, "--rtol", "rtol", "rollout solver rtol (default 1e-6)");
    opt_double(extend, extend_args, "--atol", "atol", "rollout solver atol (default 1e-6)");
    opt_flag(extend, extend_args, "--fine-tune", "fine_tune",
             "retrain on --data (a tenth of the base data, a fifth of the epochs)");
    opt_str(extend, extend_args, "--data", "data", "extension dataset for fine-tuning");
    opt_int(extend, extend_args, "--epochs-base", "epochs_base",
            "base epochs the fifth is taken from (default: checkpoint metadata)");
    opt_double(extend, extend_args, "--lr", "lr", "fine-tune learning rate");
    opt_int(extend, extend_args, "--batch", "batch", "fine-tune batch size");
    opt_str(extend, extend_args, "--out", "out", "report CSV path");

    auto* check = app.add_subcommand("check", "run the oracle and gradient verification suites");
    add_common(check, check_args);
    opt_str(check, check_args, "--suite", "suite",
            "all | fd-gradient | el-oracle | energy-drift | equivariance");
    opt_str(check, check_args, "--system", "system", "restrict to one system: pend | body");
    opt_int(check, check_args, "--n", "n", "element count for the chosen system");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : modlanet::cli::kConfigError;
    }

    if (gen->parsed()) return modlanet::cli::cmd_gen(gen_args.merged());
    if (train->parsed()) return modlanet::cli::cmd_train(train_args.merged());
    if (evalc->parsed()) return modlanet::cli::cmd_eval(eval_args.merged());
    if (extend->parsed()) return modlanet::cli::cmd_extend(extend_args.merged());
    if (check->parsed()) return modlanet::cli::cmd_check(check_args.merged());
    return modlanet::cli::kConfigError;
}
