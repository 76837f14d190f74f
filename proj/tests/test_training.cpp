#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "modlanet/training.hpp"

using namespace modlanet;
using namespace modlanet::training;
using model::DynamicsModel;
using systems::Dataset;
using systems::Sample;
using systems::SystemSpec;
using testing_support::close_rel;

namespace {

// 2-element chain model with width-4 nets: small enough for finite
// differences over every parameter.
model::ModelConfig tiny_modular_config(int width = 4) {
    auto cfg = model::default_modular_config(SystemSpec::pendulum(2));
    cfg.type.tq = nets::MlpSpec{1, {width}, 2, nets::Activation::Softplus};
    cfg.type.tqd = nets::MlpSpec{1, {width}, 2, nets::Activation::Softplus};
    cfg.type.u_env = nets::MlpSpec{2, {width}, 1, nets::Activation::Softplus};
    cfg.type.u_pair = nets::MlpSpec{4, {width}, 1, nets::Activation::Softplus};
    cfg.validate();
    return cfg;
}

DynamicsModel zeroed_baseline(const SystemSpec& spec) {
    auto m = DynamicsModel::initialize(model::default_baseline_config(spec), 3);
    m.params().at("f.w2").assign(m.params().at("f.w2").size(), 0.0);
    m.params().at("f.b2").assign(m.params().at("f.b2").size(), 0.0);
    m.refresh_params();
    return m;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("loss: residual norms and the L1 option") {
    auto m = zeroed_baseline(SystemSpec::pendulum(2));
    Sample smp;
    smp.state.q = {0.1, 0.2};
    smp.state.qd = {0.3, 0.4};
    smp.qddot = {-3.0, -4.0};  // prediction 0 leaves residual (3, 4)
    const Sample batch[1] = {smp};
    CHECK(loss(m, batch, LossKind::L2Norm) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(loss(m, batch, LossKind::L1) == doctest::Approx(7.0).epsilon(1e-12));

    Sample perfect = smp;
    perfect.qddot = {0.0, 0.0};
    const Sample pbatch[1] = {perfect};
    CHECK(loss(m, pbatch) == 0.0);
}

TEST_CASE("adam: fresh state with zero gradients leaves parameters unchanged") {
    TrainConfig cfg;
    cfg.lr = 1e-2;
    std::vector<double> params = {1.0, -2.0, 0.5};
    const std::vector<double> zeros(3, 0.0);
    AdamState st;
    for (int i = 0; i < 10; ++i) adam_step(params, zeros, cfg, st);
    CHECK(params == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam: constant gradient reaches the lr-sized step") {
    TrainConfig cfg;
    cfg.lr = 1e-3;
    std::vector<double> params = {0.0};
    const std::vector<double> grad = {2.5};
    AdamState st;
    double prev = params[0];
    double step = 0.0;
    for (int i = 0; i < 200; ++i) {
        adam_step(params, grad, cfg, st);
        step = prev - params[0];
        prev = params[0];
    }
    CHECK(step == doctest::Approx(cfg.lr).epsilon(1e-3));
}

TEST_CASE("loss gradient through the acceleration solve matches finite differences") {
    const auto cfg = tiny_modular_config();
    auto store = model::init_params(cfg, 11);

    const auto spec = SystemSpec::pendulum(2);
    const auto ds = systems::generate_dataset(spec, 1, 0.3, 10, 5, 1);
    const std::vector<Sample> batch(ds.samples.begin(), ds.samples.begin() + 3);

    const auto grads = loss_gradient(cfg, store, batch);
    REQUIRE(grads.size() == static_cast<std::size_t>(store.total_count()));

    auto flat = store.flatten();
    const auto loss_at = [&](const std::vector<double>& p) {
        auto s2 = store;
        s2.unflatten(p);
        DynamicsModel m(cfg, std::make_shared<nets::ParameterStore>(s2));
        return loss(m, batch);
    };
    int checked = 0;
    for (std::size_t k = 0; k < flat.size(); ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(flat[k]));
        auto plus = flat, minus = flat;
        plus[k] += h;
        minus[k] -= h;
        const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        if (std::abs(fd) < 1e-10 && std::abs(grads[k]) < 1e-10) continue;
        ++checked;
        CHECK_MESSAGE(close_rel(grads[k], fd, 1e-4, 1e-7),
                      "param " << k << ": " << grads[k] << " vs fd " << fd);
    }
    CHECK(checked > 50);
}

TEST_CASE("training is deterministic and reduces the loss") {
    const auto spec = SystemSpec::pendulum(2);
    const auto train_ds = systems::generate_dataset(spec, 4, 1.0, 10, 21, 1);
    const auto test_ds = systems::generate_dataset(spec, 1, 1.0, 10, 9021, 1);

    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 16;
    cfg.lr = 3e-3;
    cfg.seed = 4;

    auto m1 = DynamicsModel::initialize(tiny_modular_config(8), 17);
    const auto r1 = train(m1, train_ds, test_ds, cfg);
    auto m2 = DynamicsModel::initialize(tiny_modular_config(8), 17);
    const auto r2 = train(m2, train_ds, test_ds, cfg);

    CHECK_FALSE(r1.diverged);
    CHECK(r1.train_loss == r2.train_loss);
    CHECK(r1.test_loss == r2.test_loss);
    CHECK(m1.params().flatten() == m2.params().flatten());
    CHECK(r1.train_loss.back() < r1.train_loss.front());
    CHECK(r1.train_loss.size() == 31);  // initial entry + one per epoch

    // two workers, same result as far as the totals go (deterministic fold)
    TrainConfig cfg2 = cfg;
    cfg2.threads = 2;
    auto m3 = DynamicsModel::initialize(tiny_modular_config(8), 17);
    const auto r3 = train(m3, train_ds, test_ds, cfg2);
    CHECK(std::abs(r3.train_loss.back() - r1.train_loss.back()) < 1e-9);
}

TEST_CASE("a 32-sample set is memorized by the modular model") {
    const auto spec = SystemSpec::pendulum(2);
    auto ds = systems::generate_dataset(spec, 1, 3.2, 10, 33, 1);
    REQUIRE(ds.samples.size() == 32);

    auto m = DynamicsModel::initialize(tiny_modular_config(8), 2);
    TrainConfig cfg;
    cfg.epochs = 5000;
    cfg.batch_size = 32;
    cfg.lr = 1e-2;
    cfg.seed = 1;
    cfg.threads = 2;
    const auto report = train(m, ds, Dataset{}, cfg);
    CHECK_FALSE(report.diverged);
    CHECK(report.final_train_loss() < 1e-3);
}

TEST_CASE("zero-epoch run records initial losses and changes nothing") {
    const auto spec = SystemSpec::pendulum(2);
    const auto ds = systems::generate_dataset(spec, 1, 1.0, 10, 2, 1);
    auto m = DynamicsModel::initialize(tiny_modular_config(), 5);
    const auto before = m.params().flatten();
    TrainConfig cfg;
    cfg.epochs = 0;
    const auto report = train(m, ds, ds, cfg);
    CHECK(report.train_loss.size() == 1);
    CHECK(report.test_loss.size() == 1);
    CHECK(report.epochs_run == 0);
    CHECK(m.params().flatten() == before);
    CHECK(report.train_loss[0] == doctest::Approx(report.test_loss[0]));
}

TEST_CASE("divergence is flagged and parameters roll back") {
    const auto spec = SystemSpec::pendulum(2);
    auto ds = systems::generate_dataset(spec, 1, 1.0, 10, 2, 1);
    for (auto& smp : ds.samples)
        for (auto& v : smp.qddot) v = 1e8;  // unreachable targets force loss > 1e6
    auto m = DynamicsModel::initialize(tiny_modular_config(), 5);
    const auto before = m.params().flatten();
    TrainConfig cfg;
    cfg.epochs = 3;
    const auto report = train(m, ds, Dataset{}, cfg);
    CHECK(report.diverged);
    CHECK(m.params().flatten() == before);  // rolled back to the last finite epoch
}

TEST_CASE("fine_tune uses a fifth of the epochs and rejects empty data") {
    const auto spec = SystemSpec::pendulum(2);
    const auto ds = systems::generate_dataset(spec, 1, 1.0, 10, 2, 1);
    auto m = DynamicsModel::initialize(tiny_modular_config(), 5);
    TrainConfig base;
    base.epochs = 20;
    const auto report = fine_tune(m, ds, Dataset{}, base);
    CHECK(report.epochs_run == 4);

    Dataset empty;
    empty.spec = spec;
    CHECK_THROWS_AS((void)fine_tune(m, empty, Dataset{}, base), std::invalid_argument);
}

TEST_CASE("report CSV layout") {
    TrainReport r;
    r.train_loss = {1.0, 0.5};
    r.test_loss = {1.1, 0.6};
    r.seconds = {0.0, 2.5};
    const auto path = (std::filesystem::temp_directory_path() / "modlanet_report.csv").string();
    save_report_csv(r, path, "{\"lr\":0.001}");
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "# {\"lr\":0.001}");
    std::getline(in, line);
    CHECK(line == "epoch,train_loss,test_loss,seconds");
    std::getline(in, line);
    CHECK(line == "0,1,1.1000000000000001,0.000");
    std::filesystem::remove(path);
}

TEST_CASE("config validation bounds") {
    TrainConfig cfg;
    cfg.lr = 1e-5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.lr = 0.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.lr = 1e-2;
    CHECK_NOTHROW(cfg.validate());
}

}  // TEST_SUITE
