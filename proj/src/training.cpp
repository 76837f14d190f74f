#include "modlanet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "modlanet/threads.hpp"

namespace modlanet::training {

using autodiff::NodeId;
using autodiff::Schedule;
using systems::Sample;

void TrainConfig::validate() const {
    if (!(lr >= 1e-4 && lr <= 1e-1))
        throw std::invalid_argument("TrainConfig: lr outside the legal range 1e-4..1e-1");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (clip_norm <= 0.0) throw std::invalid_argument("TrainConfig: clip_norm must be > 0");
}

double loss(model::DynamicsModel& m, std::span<const Sample> batch, LossKind kind) {
    if (batch.empty()) throw std::invalid_argument("loss: empty batch");
    const auto dim = static_cast<std::size_t>(m.q_dim());
    std::vector<double> pred(dim, 0.0);
    double total = 0.0;
    for (const auto& smp : batch) {
        if (!m.forward(smp.state.q, smp.state.qd, pred))
            return std::numeric_limits<double>::infinity();
        double acc = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double r = pred[i] - smp.qddot[i];
            acc += kind == LossKind::L2Norm ? r * r : std::abs(r);
        }
        total += kind == LossKind::L2Norm ? std::sqrt(acc) : acc;
    }
    return total / static_cast<double>(batch.size());
}

void adam_step(std::vector<double>& params, std::span<const double> grads,
               const TrainConfig& cfg, AdamState& state) {
    if (grads.size() != params.size()) throw std::invalid_argument("adam_step: size mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
}

namespace {

// The model program extended with a seeded cotangent: binding the seed
// inputs to dLoss/dq̈ and evaluating the gradient nodes yields the full
// parameter gradient in one pass. The chain runs through the in-graph
// acceleration solve, i.e. through the second derivatives of L.
struct TrainerProgram {
    model::Program prog;
    std::vector<NodeId> seed_in;
    std::vector<NodeId> grad_nodes;
    Schedule grad_tail;  // gradient schedule minus the acceleration part

    explicit TrainerProgram(const model::ModelConfig& cfg)
        : prog(model::build_program(cfg, model::build_tree(cfg.system))) {
        auto& g = prog.g;
        std::vector<NodeId> prods;
        for (NodeId qdd : prog.qdd_nodes) {
            const NodeId s = g.input();
            seed_in.push_back(s);
            prods.push_back(g.mul(s, qdd));
        }
        const NodeId dot = g.sum(prods);
        grad_nodes = g.grad(dot, prog.param_nodes);
        const Schedule full = g.make_schedule(grad_nodes);
        grad_tail.reserve(full.size());
        std::set_difference(full.begin(), full.end(), prog.qdd_sched.begin(),
                            prog.qdd_sched.end(), std::back_inserter(grad_tail));
    }

    void bind_params(std::span<const double> flat) { prog.g.set_params(flat); }

    // Returns the per-sample loss; adds the parameter gradient into acc.
    double accumulate(const Sample& smp, LossKind kind, std::span<double> acc) {
        auto& g = prog.g;
        const std::size_t dim = prog.q_in.size();
        for (std::size_t i = 0; i < dim; ++i) {
            g.set_input(prog.q_in[i], smp.state.q[i]);
            g.set_input(prog.qd_in[i], smp.state.qd[i]);
        }
        g.eval_schedule(prog.qdd_sched);
        double sample_loss = 0.0;
        std::vector<double> residual(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            residual[i] = g.value(prog.qdd_nodes[i]) - smp.qddot[i];
            sample_loss += kind == LossKind::L2Norm ? residual[i] * residual[i]
                                                    : std::abs(residual[i]);
        }
        if (kind == LossKind::L2Norm) sample_loss = std::sqrt(sample_loss);
        if (!std::isfinite(sample_loss)) return sample_loss;
        if (kind == LossKind::L2Norm && sample_loss < 1e-150) return 0.0;  // flat residual
        for (std::size_t i = 0; i < dim; ++i) {
            const double seed = kind == LossKind::L2Norm
                                    ? residual[i] / sample_loss
                                    : (residual[i] > 0.0 ? 1.0
                                       : residual[i] < 0.0 ? -1.0
                                                           : 0.0);
            g.set_input(seed_in[i], seed);
        }
        g.eval_schedule(grad_tail);
        for (std::size_t k = 0; k < grad_nodes.size(); ++k) acc[k] += g.value(grad_nodes[k]);
        return sample_loss;
    }

    // Forward-only loss over the in-graph acceleration route.
    double sample_loss(const Sample& smp, LossKind kind) {
        auto& g = prog.g;
        const std::size_t dim = prog.q_in.size();
        for (std::size_t i = 0; i < dim; ++i) {
            g.set_input(prog.q_in[i], smp.state.q[i]);
            g.set_input(prog.qd_in[i], smp.state.qd[i]);
        }
        g.eval_schedule(prog.qdd_sched);
        double acc = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double r = g.value(prog.qdd_nodes[i]) - smp.qddot[i];
            acc += kind == LossKind::L2Norm ? r * r : std::abs(r);
        }
        return kind == LossKind::L2Norm ? std::sqrt(acc) : acc;
    }
};

}  // namespace

std::vector<double> loss_gradient(const model::ModelConfig& cfg,
                                  const nets::ParameterStore& params,
                                  std::span<const systems::Sample> batch, LossKind kind) {
    if (batch.empty()) throw std::invalid_argument("loss_gradient: empty batch");
    TrainerProgram tp(cfg);
    tp.bind_params(params.flatten());
    std::vector<double> grads(tp.grad_nodes.size(), 0.0);
    for (const auto& smp : batch) (void)tp.accumulate(smp, kind, grads);
    for (auto& g : grads) g /= static_cast<double>(batch.size());
    return grads;
}

namespace {

double mean_loss_parallel(std::vector<TrainerProgram>& workers,
                          std::span<const Sample> samples, LossKind kind, int threads) {
    if (samples.empty()) return 0.0;
    std::vector<double> partial(workers.size(), 0.0);
    parallel_chunks(static_cast<std::int64_t>(samples.size()), threads,
                    [&](std::int64_t first, std::int64_t last, int w) {
                        double s = 0.0;
                        for (std::int64_t i = first; i < last; ++i)
                            s += workers[static_cast<std::size_t>(w)].sample_loss(
                                samples[static_cast<std::size_t>(i)], kind);
                        partial[static_cast<std::size_t>(w)] = s;
                    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total / static_cast<double>(samples.size());
}

}  // namespace

TrainReport train(model::DynamicsModel& m, const systems::Dataset& train_data,
                  const systems::Dataset& test_data, const TrainConfig& cfg) {
    cfg.validate();
    if (train_data.samples.empty()) throw std::invalid_argument("train: empty dataset");
    const auto dim = static_cast<std::size_t>(m.q_dim());
    for (const auto& smp : train_data.samples)
        if (smp.state.q.size() != dim || smp.qddot.size() != dim)
            throw std::invalid_argument("train: dataset dimensions do not match the model");

    const int threads = std::max(1, cfg.threads);
    std::vector<TrainerProgram> workers;
    workers.reserve(static_cast<std::size_t>(threads));
    workers.emplace_back(m.config());
    for (int w = 1; w < threads; ++w) workers.push_back(workers.front());

    std::vector<double> params = m.params().flatten();
    const std::size_t n_params = params.size();
    AdamState adam;
    TrainReport report;

    const auto t_start = std::chrono::steady_clock::now();
    const auto record = [&](double train_l, double test_l) {
        report.train_loss.push_back(train_l);
        report.test_loss.push_back(test_l);
        report.seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count());
        if (cfg.on_epoch)
            cfg.on_epoch(static_cast<int>(report.train_loss.size()) - 1, train_l, test_l,
                         report.seconds.back());
    };
    const auto write_back = [&](std::span<const double> flat) {
        m.params().unflatten(flat);
        m.refresh_params();
    };

    for (auto& w : workers) w.bind_params(params);
    record(mean_loss_parallel(workers, train_data.samples, cfg.loss, threads),
           test_data.samples.empty()
               ? 0.0
               : mean_loss_parallel(workers, test_data.samples, cfg.loss, threads));

    const std::size_t n = train_data.samples.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> snapshot = params;

    std::vector<std::vector<double>> grad_acc(
        static_cast<std::size_t>(threads), std::vector<double>(n_params, 0.0));
    std::vector<double> loss_acc(static_cast<std::size_t>(threads), 0.0);
    std::vector<double> grads(n_params, 0.0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        snapshot = params;
        Rng shuffle_rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(epoch) + 1);
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        bool finite = true;
        for (std::size_t start = 0; start < n && finite; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            const auto count = static_cast<double>(stop - start);
            for (auto& acc : grad_acc) std::fill(acc.begin(), acc.end(), 0.0);
            parallel_chunks(static_cast<std::int64_t>(stop - start), threads,
                            [&](std::int64_t first, std::int64_t last, int w) {
                                auto& worker = workers[static_cast<std::size_t>(w)];
                                double l = 0.0;
                                for (std::int64_t k = first; k < last; ++k) {
                                    const auto& smp =
                                        train_data.samples[order[start + static_cast<std::size_t>(k)]];
                                    l += worker.accumulate(smp, cfg.loss,
                                                           grad_acc[static_cast<std::size_t>(w)]);
                                }
                                loss_acc[static_cast<std::size_t>(w)] = l;
                            });
            double batch_loss = 0.0;
            for (int w = 0; w < threads; ++w) batch_loss += loss_acc[static_cast<std::size_t>(w)];
            batch_loss /= count;
            if (!std::isfinite(batch_loss)) {
                finite = false;
                break;
            }
            epoch_loss += batch_loss * count;

            std::fill(grads.begin(), grads.end(), 0.0);
            for (int w = 0; w < threads; ++w)
                for (std::size_t k = 0; k < n_params; ++k)
                    grads[k] += grad_acc[static_cast<std::size_t>(w)][k];
            double norm = 0.0;
            for (std::size_t k = 0; k < n_params; ++k) {
                grads[k] /= count;
                norm += grads[k] * grads[k];
            }
            norm = std::sqrt(norm);
            if (!std::isfinite(norm)) {
                finite = false;
                break;
            }
            if (norm > cfg.clip_norm)
                for (auto& gk : grads) gk *= cfg.clip_norm / norm;
            adam_step(params, grads, cfg, adam);
            for (auto& w : workers) w.bind_params(params);
        }
        epoch_loss /= static_cast<double>(n);

        if (!finite || !std::isfinite(epoch_loss) || epoch_loss > 1e6) {
            report.diverged = true;
            params = snapshot;  // last finite parameters
            break;
        }
        report.epochs_run = epoch + 1;
        const double test_l =
            test_data.samples.empty()
                ? 0.0
                : mean_loss_parallel(workers, test_data.samples, cfg.loss, threads);
        record(epoch_loss, test_l);
    }

    write_back(params);
    return report;
}

TrainReport fine_tune(model::DynamicsModel& m, const systems::Dataset& small_data,
                      const systems::Dataset& test_data, const TrainConfig& base_cfg) {
    if (small_data.samples.empty())
        throw std::invalid_argument("fine_tune: empty extension dataset");
    TrainConfig cfg = base_cfg;
    cfg.epochs = std::max(1, base_cfg.epochs / 5);
    return train(m, small_data, test_data, cfg);
}

void save_report_csv(const TrainReport& report, const std::string& path,
                     const std::string& config_echo) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_report_csv: cannot open " + path);
    if (!config_echo.empty()) out << "# " << config_echo << '\n';
    out << "epoch,train_loss,test_loss,seconds\n";
    char buf[128];
    for (std::size_t i = 0; i < report.train_loss.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.3f\n", i, report.train_loss[i],
                      report.test_loss[i], report.seconds[i]);
        out << buf;
    }
    if (!out) throw std::runtime_error("save_report_csv: write failed for " + path);
}

}  // namespace modlanet::training
