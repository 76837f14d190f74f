#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "helpers.hpp"
#include "modlanet/model.hpp"

using namespace modlanet;
using namespace modlanet::model;
using systems::SystemSpec;
using testing_support::close_rel;

namespace {

double eval_node(DynamicsModel& m, autodiff::NodeId node, const std::vector<double>& q,
                 const std::vector<double>& qd) {
    auto& p = m.program();
    for (std::size_t i = 0; i < q.size(); ++i) {
        p.g.set_input(p.q_in[i], q[i]);
        p.g.set_input(p.qd_in[i], qd[i]);
    }
    return p.g.evaluate(node);
}

void make_constant_net(nets::ParameterStore& store, const std::string& prefix, double out_value) {
    for (const auto& name : store.names()) {
        if (name.rfind(prefix + ".", 0) == 0)
            for (auto& v : store.at(name)) v = 0.0;
    }
    store.at(prefix + ".b2") = {out_value};
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("build_tree shapes") {
    const auto chain = build_tree(SystemSpec::pendulum(3));
    CHECK(chain.parent == std::vector<int>{-1, 0, 1});
    const auto roots = build_tree(SystemSpec::bodies(4));
    CHECK(roots.parent == std::vector<int>{-1, -1, -1, -1});
    const auto single = build_tree(SystemSpec::pendulum(1));
    CHECK(single.parent == std::vector<int>{-1});
}

TEST_CASE("parameter budgets of the default configs") {
    const auto pend = default_modular_config(SystemSpec::pendulum(2));
    CHECK(count_params(pend) >= 5000);
    CHECK(count_params(pend) <= 7500);

    const auto body = default_modular_config(SystemSpec::bodies(3));
    CHECK(count_params(body) >= 4500);
    CHECK(count_params(body) <= 6700);

    const auto base = default_baseline_config(SystemSpec::pendulum(2));
    CHECK(std::abs(static_cast<double>(count_params(base)) - 41400.0) / 41400.0 < 0.2);

    // formula == enumeration, for every preset
    for (const auto& cfg :
         {pend, body, base, default_baseline_config(SystemSpec::bodies(3)),
          default_monolithic_config(SystemSpec::pendulum(2)),
          default_monolithic_config(SystemSpec::bodies(3)),
          analytic_plugin_config(SystemSpec::pendulum(2)),
          analytic_plugin_config(SystemSpec::bodies(3))}) {
        const auto store = init_params(cfg, 3);
        CHECK(store.total_count() == count_params(cfg));
        CHECK(store.names() == expected_param_names(cfg));
    }

    // parameter sharing: the tensor set does not depend on element count
    const auto pend5 = default_modular_config(SystemSpec::pendulum(5));
    CHECK(count_params(pend5) == count_params(pend));
    CHECK(expected_param_names(pend5) == expected_param_names(pend));
}

TEST_CASE("potential assembly counts terms the way the framework defines") {
    // bodies-style identity transforms with constant nets U_i = u, U_ij = v
    auto cfg = default_modular_config(SystemSpec::bodies(3));
    cfg.type.env_potential = PotentialKind::Mlp;
    cfg.type.u_env = nets::MlpSpec{2, {4, 4}, 1, nets::Activation::Softplus};
    cfg.type.u_pair = nets::MlpSpec{4, {4, 4}, 1, nets::Activation::Softplus};
    auto model = DynamicsModel::initialize(cfg, 1);
    const double u = 0.37, v = -1.21;
    make_constant_net(model.params(), "u_env", u);
    make_constant_net(model.params(), "u_pair", v);
    model.refresh_params();

    const std::vector<double> q = {0.1, 0.2, 1.0, -0.4, -0.7, 0.9};
    const std::vector<double> qd(6, 0.0);
    // with q̇ = 0 the Lagrangian reduces to -U = -(3 c1 u + 3 c2 v), c1 = c2 = 1
    CHECK(eval_node(model, model.program().potential, q, qd) ==
          doctest::Approx(3.0 * u + 3.0 * v).epsilon(1e-12));
    CHECK(eval_node(model, model.program().lagrangian, q, qd) ==
          doctest::Approx(-(3.0 * u + 3.0 * v)).epsilon(1e-12));

    model.params().at("c1") = {0.0};
    model.params().at("c2") = {0.0};
    model.refresh_params();
    CHECK(eval_node(model, model.program().potential, q, qd) == doctest::Approx(0.0));

    // n = 1: the pairwise sum is empty
    auto cfg1 = cfg;
    cfg1.system = SystemSpec::bodies(1);
    auto model1 = DynamicsModel::initialize(cfg1, 1);
    make_constant_net(model1.params(), "u_env", u);
    make_constant_net(model1.params(), "u_pair", v);
    model1.refresh_params();
    CHECK(eval_node(model1, model1.program().potential, std::vector<double>{0.3, 0.4}, std::vector<double>{0.0, 0.0}) ==
          doctest::Approx(u).epsilon(1e-12));
}

TEST_CASE("kinetic assembly: T = sum m |xdot|^2 / 2 and is nonnegative") {
    auto cfg = analytic_plugin_config(SystemSpec::bodies(2));
    auto model = DynamicsModel::initialize(cfg, 1);
    // m = 2: log_mass = ln 2 (plug-in masses are structural, not fitted here)
    model.params().at("log_mass") = {std::log(2.0)};
    model.refresh_params();
    CHECK(eval_node(model, model.program().kinetic, std::vector<double>{0.0, 0.0, 2.0, 0.0}, std::vector<double>{3.0, 4.0, 0.0, 0.0}) ==
          doctest::Approx(25.0).epsilon(1e-12));
    CHECK(eval_node(model, model.program().kinetic, std::vector<double>{0.0, 0.0, 2.0, 0.0}, std::vector<double>{0.0, 0.0, 0.0, 0.0}) ==
          doctest::Approx(0.0));

    auto pend = DynamicsModel::initialize(default_modular_config(SystemSpec::pendulum(2)), 7);
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        const std::vector<double> q = {rng.uniform(-3, 3), rng.uniform(-3, 3)};
        const std::vector<double> qd = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
        CHECK(eval_node(pend, pend.program().kinetic, q, qd) >= 0.0);
    }
}

TEST_CASE("chain transform geometry with the analytic plug-in") {
    const auto spec = SystemSpec::pendulum(3);
    auto model = DynamicsModel::initialize(analytic_plugin_config(spec), 1);
    Rng rng(9);
    const std::vector<double> q = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const std::vector<double> qd = {0.4, -0.2, 1.1};
    const auto expected = systems::pendulum_positions(spec, q);
    auto& p = model.program();
    for (std::size_t i = 0; i < q.size(); ++i) {
        p.g.set_input(p.q_in[i], q[i]);
        p.g.set_input(p.qd_in[i], qd[i]);
    }
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(p.g.evaluate(p.x_nodes[i][0]) == doctest::Approx(expected[i][0]).epsilon(1e-12));
        CHECK(p.g.evaluate(p.x_nodes[i][1]) == doctest::Approx(expected[i][1]).epsilon(1e-12));
    }
}

TEST_CASE("zero generalized velocity gives zero global velocities") {
    auto model = DynamicsModel::initialize(default_modular_config(SystemSpec::pendulum(3)), 21);
    auto& p = model.program();
    for (std::size_t i = 0; i < 3; ++i) {
        p.g.set_input(p.q_in[i], 0.3 * static_cast<double>(i) - 0.2);
        p.g.set_input(p.qd_in[i], 0.0);
    }
    for (const auto& row : p.xd_nodes)
        for (auto id : row) CHECK(p.g.evaluate(id) == 0.0);
}

TEST_CASE("untrained modular forward is finite with the right shape") {
    for (const auto& spec : {SystemSpec::pendulum(2), SystemSpec::bodies(3)}) {
        auto model = DynamicsModel::initialize(default_modular_config(spec), 1234);
        Rng rng(55);
        std::vector<double> q(static_cast<std::size_t>(spec.q_dim()));
        std::vector<double> qd(q.size());
        for (auto& v : q) v = rng.uniform(-1, 1);
        for (auto& v : qd) v = rng.uniform(-1, 1);
        std::vector<double> a(q.size(), 0.0);
        REQUIRE(model.forward(q, qd, a));
        for (double v : a) CHECK(std::isfinite(v));
    }
}

TEST_CASE("in-graph acceleration equals the numeric solve route") {
    for (const auto& spec : {SystemSpec::pendulum(2), SystemSpec::bodies(3)}) {
        auto model = DynamicsModel::initialize(default_modular_config(spec), 77);
        auto& p = model.program();
        Rng rng(66);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> q(static_cast<std::size_t>(spec.q_dim()));
            std::vector<double> qd(q.size());
            for (auto& v : q) v = rng.uniform(-1.5, 1.5);
            for (auto& v : qd) v = rng.uniform(-1.5, 1.5);
            std::vector<double> a(q.size(), 0.0);
            REQUIRE(model.forward(q, qd, a));
            for (std::size_t i = 0; i < q.size(); ++i) {
                p.g.set_input(p.q_in[i], q[i]);
                p.g.set_input(p.qd_in[i], qd[i]);
            }
            p.g.eval_schedule(p.qdd_sched);
            for (std::size_t i = 0; i < q.size(); ++i)
                CHECK(close_rel(p.g.value(p.qdd_nodes[i]), a[i], 1e-10, 1e-12));
        }
    }
}

TEST_CASE("modular pipeline with analytic pieces reproduces the oracle") {
    for (int n = 1; n <= 3; ++n) {
        const auto spec = SystemSpec::pendulum(n);
        auto model = DynamicsModel::initialize(analytic_plugin_config(spec), 1);
        systems::OracleDynamics oracle(spec);
        for (int trial = 0; trial < 50; ++trial) {
            Rng rng = Rng::stream(700, static_cast<std::uint64_t>(n * 100 + trial));
            const auto s = systems::sample_initial_state(spec, rng);
            std::vector<double> a(s.q.size(), 0.0), e(s.q.size(), 0.0);
            REQUIRE(model.forward(s.q, s.qd, a));
            REQUIRE(oracle.accel(s.q, s.qd, e));
            for (std::size_t i = 0; i < a.size(); ++i)
                CHECK_MESSAGE(close_rel(a[i], e[i], 1e-8, 1e-10),
                              "pend n=" << n << ": " << a[i] << " vs " << e[i]);
        }
    }
    for (int n = 2; n <= 6; ++n) {
        const auto spec = SystemSpec::bodies(n);
        auto model = DynamicsModel::initialize(analytic_plugin_config(spec), 1);
        systems::OracleDynamics oracle(spec);
        for (int trial = 0; trial < 50; ++trial) {
            Rng rng = Rng::stream(701, static_cast<std::uint64_t>(n * 100 + trial));
            const auto s = systems::sample_initial_state(spec, rng);
            std::vector<double> a(s.q.size(), 0.0), e(s.q.size(), 0.0);
            REQUIRE(model.forward(s.q, s.qd, a));
            REQUIRE(oracle.accel(s.q, s.qd, e));
            for (std::size_t i = 0; i < a.size(); ++i)
                CHECK_MESSAGE(close_rel(a[i], e[i], 1e-8, 1e-10),
                              "body n=" << n << ": " << a[i] << " vs " << e[i]);
        }
    }
}

TEST_CASE("permutation equivariance of the n-body model") {
    const auto spec = SystemSpec::bodies(4);
    auto model = DynamicsModel::initialize(default_modular_config(spec), 2025);
    Rng rng(31);
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> q(8), qd(8);
        for (auto& v : q) v = rng.uniform(-1.5, 1.5);
        for (auto& v : qd) v = rng.uniform(-1.0, 1.0);
        std::vector<double> qp(8), qdp(8);
        for (std::size_t i = 0; i < 4; ++i) {
            qp[2 * i] = q[2 * perm[i]];
            qp[2 * i + 1] = q[2 * perm[i] + 1];
            qdp[2 * i] = qd[2 * perm[i]];
            qdp[2 * i + 1] = qd[2 * perm[i] + 1];
        }
        std::vector<double> a(8, 0.0), ap(8, 0.0);
        REQUIRE(model.forward(q, qd, a));
        REQUIRE(model.forward(qp, qdp, ap));
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(std::abs(ap[2 * i] - a[2 * perm[i]]) <= 1e-12);
            CHECK(std::abs(ap[2 * i + 1] - a[2 * perm[i] + 1]) <= 1e-12);
        }
    }
}

TEST_CASE("baseline with a zeroed output layer predicts zero") {
    auto model = DynamicsModel::initialize(default_baseline_config(SystemSpec::pendulum(2)), 5);
    model.params().at("f.w2").assign(model.params().at("f.w2").size(), 0.0);
    model.params().at("f.b2").assign(model.params().at("f.b2").size(), 0.0);
    model.refresh_params();
    std::vector<double> a(2, 1.0);
    const std::vector<double> qz = {0.4, -0.7}, qdz = {1.0, 0.3};
    REQUIRE(model.forward(qz, qdz, a));
    CHECK(a[0] == 0.0);
    CHECK(a[1] == 0.0);
}

TEST_CASE("monolithic model runs the Lagrangian machinery") {
    auto model = DynamicsModel::initialize(default_monolithic_config(SystemSpec::pendulum(2)), 5);
    std::vector<double> a(2, 0.0);
    const std::vector<double> qm = {0.2, 0.1}, qdm = {0.0, 0.0};
    const bool ok = model.forward(qm, qdm, a);
    if (ok)
        for (double v : a) CHECK(std::isfinite(v));
    const auto count = count_params(default_monolithic_config(SystemSpec::pendulum(2)));
    CHECK(std::abs(static_cast<double>(count) - 6200.0) / 6200.0 < 0.2);
}

TEST_CASE("extension rebuilds the tree and shares parameters") {
    const auto base_spec = SystemSpec::pendulum(2);
    auto base = DynamicsModel::initialize(default_modular_config(base_spec), 99);
    auto bigger = extend_model(base, SystemSpec::pendulum(3));
    CHECK(bigger.param_count() == base.param_count());
    CHECK(&bigger.params() == &base.params());
    CHECK(bigger.q_dim() == 3);

    auto body3 = DynamicsModel::initialize(default_modular_config(SystemSpec::bodies(3)), 99);
    auto body6 = extend_model(body3, SystemSpec::bodies(6));
    CHECK(body6.q_dim() == 12);
    std::vector<double> a(12, 0.0);
    Rng rng(8);
    const auto s = systems::sample_initial_state(SystemSpec::bodies(6), rng);
    REQUIRE(body6.forward(s.q, s.qd, a));

    // extend then shrink back: forward is bit-identical
    auto back = extend_model(bigger, base_spec);
    const std::vector<double> q = {0.3, -0.4}, qd = {0.7, 0.2};
    std::vector<double> a1(2, 0.0), a2(2, 0.0);
    REQUIRE(base.forward(q, qd, a1));
    REQUIRE(back.forward(q, qd, a2));
    CHECK(a1[0] == a2[0]);
    CHECK(a1[1] == a2[1]);

    CHECK_THROWS_AS((void)extend_model(base, SystemSpec::bodies(3)), std::invalid_argument);
    auto baseline = DynamicsModel::initialize(default_baseline_config(base_spec), 1);
    CHECK_THROWS_AS((void)extend_model(baseline, SystemSpec::pendulum(3)), std::invalid_argument);
}

TEST_CASE("scale invariance of the assembled Lagrangian") {
    auto model = DynamicsModel::initialize(default_modular_config(SystemSpec::pendulum(2)), 13);
    Rng rng(3);
    for (double alpha : {1e-3, 2.0, 10.0}) {
        const std::vector<double> q = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
        const std::vector<double> qd = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
        CHECK(check_scale_invariance(model, alpha, q, qd));
    }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    auto model = DynamicsModel::initialize(default_modular_config(SystemSpec::pendulum(2)), 321);
    const auto path = (std::filesystem::temp_directory_path() / "modlanet_ckpt_test.json").string();
    save_checkpoint(model, path, 321, "{\"epochs\":0}");
    auto loaded = load_checkpoint(path);
    CHECK(loaded.seed == 321);
    REQUIRE(loaded.model.params().names() == model.params().names());
    for (const auto& name : model.params().names()) {
        const auto& a = model.params().at(name);
        const auto& b = loaded.model.params().at(name);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
    const std::vector<double> q = {0.5, -0.3}, qd = {-0.1, 0.9};
    std::vector<double> a1(2, 0.0), a2(2, 0.0);
    REQUIRE(model.forward(q, qd, a1));
    REQUIRE(loaded.model.forward(q, qd, a2));
    CHECK(a1[0] == a2[0]);
    CHECK(a1[1] == a2[1]);
    std::filesystem::remove(path);
}

}  // TEST_SUITE
