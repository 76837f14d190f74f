#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "modlanet/model.hpp"
#include "modlanet/systems.hpp"

namespace modlanet::training {

enum class LossKind : std::uint8_t { L2Norm, L1 };

struct TrainConfig {
    double lr = 1e-3;  // legal range 1e-4 .. 1e-1
    int epochs = 2000;
    int batch_size = 256;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 10.0;  // global gradient norm cap
    int threads = 1;
    LossKind loss = LossKind::L2Norm;
    /// Called after every recorded epoch (0 = initial losses).
    std::function<void(int epoch, double train_loss, double test_loss, double seconds)> on_epoch;

    void validate() const;
};

struct TrainReport {
    // index 0 holds the losses before any update; entry k the state after
    // k epochs
    std::vector<double> train_loss;
    std::vector<double> test_loss;
    std::vector<double> seconds;  // cumulative wall time
    bool diverged = false;
    int epochs_run = 0;

    double final_train_loss() const { return train_loss.empty() ? 0.0 : train_loss.back(); }
    double final_test_loss() const { return test_loss.empty() ? 0.0 : test_loss.back(); }
};

/// Mean per-sample residual norm of the model on a batch (L2 norm per the
/// training objective; L1 optionally, for the monolithic comparison runs).
/// Non-finite predictions yield a non-finite loss, which callers treat as
/// the divergence signal.
double loss(model::DynamicsModel& m, std::span<const systems::Sample> batch,
            LossKind kind = LossKind::L2Norm);

/// Gradient of the batch loss with respect to every parameter (store
/// flattening order), computed by backpropagating through the in-graph
/// acceleration solve. This is the path training uses.
std::vector<double> loss_gradient(const model::ModelConfig& cfg,
                                  const nets::ParameterStore& params,
                                  std::span<const systems::Sample> batch,
                                  LossKind kind = LossKind::L2Norm);

struct AdamState {
    std::vector<double> m, v;
    std::int64_t t = 0;
};

/// Standard bias-corrected Adam update, in place. Deterministic.
void adam_step(std::vector<double>& params, std::span<const double> grads,
               const TrainConfig& cfg, AdamState& state);

/// Mini-batch training with per-epoch seeded shuffling. Records train/test
/// loss every epoch; divergence (non-finite or > 1e6 loss) halts with the
/// flag set and the parameters rolled back to the last finite epoch.
/// The model's parameter store is updated in place.
TrainReport train(model::DynamicsModel& m, const systems::Dataset& train_data,
                  const systems::Dataset& test_data, const TrainConfig& cfg);

/// Extension retraining: same protocol with epochs cut to a fifth of the
/// base config, on the (small) extension dataset. Errors on an empty set.
TrainReport fine_tune(model::DynamicsModel& m, const systems::Dataset& small_data,
                      const systems::Dataset& test_data, const TrainConfig& base_cfg);

/// CSV (epoch, train_loss, test_loss, seconds); a leading '#' line echoes
/// the effective config when given.
void save_report_csv(const TrainReport& report, const std::string& path,
                     const std::string& config_echo = "");

}  // namespace modlanet::training
