#pragma once

// Shared oracles and generators for the unit and acceptance suites. These
// deliberately avoid the library's differentiation path so they can vouch
// for it.

#include <cmath>
#include <functional>
#include <vector>

#include "modlanet/autodiff.hpp"
#include "modlanet/rng.hpp"

namespace testing_support {

using modlanet::Rng;
using modlanet::autodiff::Graph;
using modlanet::autodiff::NodeId;

struct RandomGraph {
    Graph g;
    std::vector<NodeId> inputs;
    NodeId output;
};

/// Random small expression over every differentiable op kind, built so all
/// intermediate values stay inside the ops' domains for inputs in [-1.5, 1.5].
inline RandomGraph make_random_graph(Rng& rng, int n_inputs, int n_ops) {
    RandomGraph rg;
    for (int i = 0; i < n_inputs; ++i) rg.inputs.push_back(rg.g.input());
    std::vector<NodeId> pool = rg.inputs;
    pool.push_back(rg.g.constant(0.7));
    pool.push_back(rg.g.constant(-1.3));
    auto pick = [&]() { return pool[rng.below(pool.size())]; };
    for (int i = 0; i < n_ops; ++i) {
        Graph& g = rg.g;
        NodeId r;
        switch (rng.below(12)) {
            case 0: r = g.add(pick(), pick()); break;
            case 1: r = g.mul(pick(), pick()); break;
            case 2: r = g.neg(pick()); break;
            case 3: r = g.sin(pick()); break;
            case 4: r = g.cos(pick()); break;
            case 5: r = g.tanh(pick()); break;
            case 6: r = g.softplus(pick()); break;
            case 7: r = g.pow_int(pick(), 2); break;
            case 8: r = g.pow_int(pick(), 3); break;
            case 9: r = g.recip(g.add(g.constant(2.5), g.tanh(pick()))); break;
            case 10: r = g.log(g.add(g.constant(3.0), g.sin(pick()))); break;
            default: r = g.exp(g.mul(g.constant(0.4), g.tanh(pick()))); break;
        }
        pool.push_back(r);
        // keep magnitudes from compounding across deep mul/add chains
        if (i % 5 == 4) pool.push_back(g.tanh(r));
    }
    const NodeId parts[3] = {pool[pool.size() - 1], pool[pool.size() - 2],
                             pool[rng.below(pool.size())]};
    rg.output = rg.g.sum(parts);
    return rg;
}

/// Central finite difference of a scalar function of one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Textbook closed-form double-pendulum accelerations (angles from the
/// downward vertical), independent of any autodiff machinery.
inline void double_pendulum_closed_form(double m1, double m2, double l1, double l2, double g,
                                        double th1, double th2, double w1, double w2,
                                        double& a1, double& a2) {
    const double d = th1 - th2;
    const double den = 2.0 * m1 + m2 - m2 * std::cos(2.0 * d);
    a1 = (-g * (2.0 * m1 + m2) * std::sin(th1) - m2 * g * std::sin(th1 - 2.0 * th2) -
          2.0 * std::sin(d) * m2 * (w2 * w2 * l2 + w1 * w1 * l1 * std::cos(d))) /
         (l1 * den);
    a2 = (2.0 * std::sin(d) *
          (w1 * w1 * l1 * (m1 + m2) + g * (m1 + m2) * std::cos(th1) +
           w2 * w2 * l2 * m2 * std::cos(d))) /
         (l2 * den);
}

inline bool close_rel(double a, double b, double rtol, double atol = 0.0) {
    return std::abs(a - b) <= rtol * std::max(std::abs(a), std::abs(b)) + atol;
}

}  // namespace testing_support
