#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "modlanet/nets.hpp"

using namespace modlanet;
using namespace modlanet::nets;
using autodiff::Graph;
using autodiff::NodeId;
using testing_support::close_rel;

namespace {

// Builds a graph around one MLP: param nodes in store order, bound from the
// store, plus input nodes.
struct MlpHarness {
    Graph g;
    MlpNodes nodes;
    std::vector<NodeId> inputs;
    std::vector<NodeId> outputs;

    MlpHarness(const MlpSpec& spec, const ParameterStore& store) {
        nodes = mlp_param_nodes(g, spec);
        g.set_params(store.flatten());
        for (int i = 0; i < spec.in_dim; ++i) inputs.push_back(g.input());
        outputs = mlp_forward(g, spec, nodes, inputs);
    }
};

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("init_mlp is deterministic with zero biases") {
    MlpSpec spec{2, {8, 8}, 3, Activation::Softplus};
    ParameterStore a, b;
    init_mlp(a, "net", spec, 42);
    init_mlp(b, "net", spec, 42);
    REQUIRE(a.names() == b.names());
    for (const auto& name : a.names()) CHECK(a.at(name) == b.at(name));

    ParameterStore c;
    init_mlp(c, "net", spec, 43);
    CHECK(a.at("net.w0") != c.at("net.w0"));

    for (double v : a.at("net.b0")) CHECK(v == 0.0);
    for (double v : a.at("net.b2")) CHECK(v == 0.0);
}

TEST_CASE("parameter count formula matches store enumeration") {
    MlpSpec spec{1, {40, 40}, 2, Activation::Softplus};
    CHECK(spec.param_count() == 1802);
    ParameterStore store;
    init_mlp(store, "t", spec, 7);
    CHECK(store.total_count() == 1802);

    MlpSpec tiny{3, {}, 2, Activation::Tanh};
    CHECK(tiny.param_count() == 8);
}

TEST_CASE("zero parameters give zero output") {
    MlpSpec spec{2, {4, 4}, 2, Activation::Softplus};
    ParameterStore store;
    init_mlp(store, "z", spec, 1);
    for (const auto& name : store.names())
        for (auto& v : store.at(name)) v = 0.0;
    MlpHarness h(spec, store);
    h.g.set_input(h.inputs[0], 1.7);
    h.g.set_input(h.inputs[1], -2.4);
    CHECK(h.g.evaluate(h.outputs[0]) == doctest::Approx(std::log(2.0) * 0.0));
    CHECK(h.g.evaluate(h.outputs[0]) == 0.0);
    CHECK(h.g.evaluate(h.outputs[1]) == 0.0);
}

TEST_CASE("unit-weight 1-[1]-1 softplus composition") {
    MlpSpec spec{1, {1}, 1, Activation::Softplus};
    ParameterStore store;
    init_mlp(store, "u", spec, 1);
    store.at("u.w0") = {1.0};
    store.at("u.b0") = {0.0};
    store.at("u.w1") = {1.0};
    store.at("u.b1") = {0.0};
    MlpHarness h(spec, store);
    h.g.set_input(h.inputs[0], 0.0);
    CHECK(h.g.evaluate(h.outputs[0]) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("input gradient of a random net matches finite differences") {
    for (Activation act : {Activation::Softplus, Activation::Tanh}) {
        MlpSpec spec{3, {6, 5}, 2, act};
        ParameterStore store;
        init_mlp(store, "r", spec, 99);
        MlpHarness h(spec, store);
        const auto grads = h.g.grad(h.outputs[0], h.inputs);
        Rng rng(4);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> x = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
            const auto eval_out = [&](const std::vector<double>& xs) {
                for (std::size_t i = 0; i < xs.size(); ++i) h.g.set_input(h.inputs[i], xs[i]);
                return h.g.evaluate(h.outputs[0]);
            };
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double fd = testing_support::central_diff(
                    [&](double xi) {
                        auto xs = x;
                        xs[i] = xi;
                        return eval_out(xs);
                    },
                    x[i]);
                eval_out(x);
                const double an = h.g.evaluate(grads[i]);
                CHECK_MESSAGE(close_rel(an, fd, 1e-5, 1e-8), an << " vs " << fd);
            }
        }
    }
}

TEST_CASE("forward pass has finite input Hessians everywhere sampled") {
    for (Activation act : {Activation::Softplus, Activation::Tanh}) {
        MlpSpec spec{2, {5, 5}, 1, act};
        ParameterStore store;
        init_mlp(store, "h", spec, 11);
        MlpHarness h(spec, store);
        const auto H = h.g.hessian(h.outputs[0], h.inputs);
        Rng rng(12);
        for (int trial = 0; trial < 1000; ++trial) {
            h.g.set_input(h.inputs[0], rng.uniform(-20.0, 20.0));
            h.g.set_input(h.inputs[1], rng.uniform(-20.0, 20.0));
            for (int j = 0; j < 2; ++j)
                for (int k = 0; k < 2; ++k)
                    CHECK(std::isfinite(h.g.evaluate(H[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)])));
        }
    }
}

TEST_CASE("mlp_forward rejects dimension mismatch") {
    MlpSpec spec{2, {3}, 1, Activation::Softplus};
    Graph g;
    const auto nodes = mlp_param_nodes(g, spec);
    const std::vector<NodeId> one_input = {g.input()};
    CHECK_THROWS_AS((void)mlp_forward(g, spec, nodes, one_input), std::invalid_argument);
}

}  // TEST_SUITE
