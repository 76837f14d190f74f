#include "modlanet/model.hpp"

#include <cmath>
#include <numbers>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace modlanet::model {

using autodiff::Graph;
using autodiff::NodeId;
using nets::MlpNodes;
using nets::MlpSpec;
using nets::ParameterStore;
using systems::SystemKind;
using systems::SystemSpec;
using json = nlohmann::json;

void ComputationTree::validate() const {
    if (n < 1) throw std::invalid_argument("ComputationTree: empty tree");
    if (parent.size() != static_cast<std::size_t>(n) || order.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("ComputationTree: size mismatch");
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (int i : order) {
        if (i < 0 || i >= n) throw std::invalid_argument("ComputationTree: bad order entry");
        const int p = parent[static_cast<std::size_t>(i)];
        if (p >= n || p == i) throw std::invalid_argument("ComputationTree: bad parent");
        if (p >= 0 && !seen[static_cast<std::size_t>(p)])
            throw std::invalid_argument("ComputationTree: child visited before parent");
        seen[static_cast<std::size_t>(i)] = 1;
    }
    for (char s : seen)
        if (!s) throw std::invalid_argument("ComputationTree: unreachable element");
}

ComputationTree build_tree(const SystemSpec& spec) {
    spec.validate();
    ComputationTree t;
    t.n = spec.n;
    t.parent.resize(static_cast<std::size_t>(spec.n));
    t.order.resize(static_cast<std::size_t>(spec.n));
    for (int i = 0; i < spec.n; ++i) {
        t.parent[static_cast<std::size_t>(i)] =
            spec.kind == SystemKind::PendulumChain ? i - 1 : -1;
        t.order[static_cast<std::size_t>(i)] = i;
    }
    return t;
}

const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::Modular: return "modular";
        case ModelKind::Monolithic: return "monolithic-lagrangian";
        case ModelKind::DirectMlp: return "direct-mlp";
    }
    return "?";
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "modular") return ModelKind::Modular;
    if (name == "monolithic-lagrangian" || name == "monolithic") return ModelKind::Monolithic;
    if (name == "direct-mlp" || name == "baseline") return ModelKind::DirectMlp;
    throw std::invalid_argument("unknown model kind: " + name);
}

int ModelConfig::q_dim_per_element() const {
    return system.kind == SystemKind::PendulumChain ? 1 : 2;
}

void ModelConfig::validate() const {
    system.validate();
    const int qe = q_dim_per_element();
    const int qdim = q_dim();
    switch (kind) {
        case ModelKind::Modular:
            switch (type.transform) {
                case TransformKind::Identity:
                    if (qe != x_dim())
                        throw std::invalid_argument(
                            "ModelConfig: identity transform needs q_e == x dim");
                    break;
                case TransformKind::Mlp:
                    if (type.tq.in_dim != qe || type.tq.out_dim != x_dim())
                        throw std::invalid_argument("ModelConfig: T_q dims");
                    if (!type.differentiate_tq &&
                        (type.tqd.in_dim != qe || type.tqd.out_dim != x_dim() * qe))
                        throw std::invalid_argument("ModelConfig: T_qd dims");
                    break;
                case TransformKind::AnalyticChain:
                    if (qe != 1 || x_dim() != 2)
                        throw std::invalid_argument("ModelConfig: analytic chain is planar 1-dof");
                    break;
            }
            if (type.env_potential == PotentialKind::Mlp &&
                (type.u_env.in_dim != x_dim() || type.u_env.out_dim != 1))
                throw std::invalid_argument("ModelConfig: U_i dims");
            if (type.pair_potential == PotentialKind::Mlp &&
                (type.u_pair.in_dim != 2 * x_dim() || type.u_pair.out_dim != 1))
                throw std::invalid_argument("ModelConfig: U_ij dims");
            break;
        case ModelKind::DirectMlp:
            if (direct_mlp.in_dim != 2 * qdim || direct_mlp.out_dim != qdim)
                throw std::invalid_argument("ModelConfig: direct MLP dims");
            break;
        case ModelKind::Monolithic:
            if (monolithic_mlp.in_dim != 2 * qdim || monolithic_mlp.out_dim != 1)
                throw std::invalid_argument("ModelConfig: monolithic MLP dims");
            break;
    }
    if (el_epsilon < 0.0) throw std::invalid_argument("ModelConfig: el_epsilon must be >= 0");
}

ModelConfig default_modular_config(const SystemSpec& spec) {
    ModelConfig cfg;
    cfg.kind = ModelKind::Modular;
    cfg.system = spec;
    if (spec.kind == SystemKind::PendulumChain) {
        cfg.type.transform = TransformKind::Mlp;
        cfg.type.tq = MlpSpec{1, {40, 40}, 2, nets::Activation::Softplus};
        cfg.type.tqd = MlpSpec{1, {40, 40}, 2, nets::Activation::Softplus};
        cfg.type.env_potential = PotentialKind::Mlp;
        cfg.type.pair_potential = PotentialKind::Mlp;
        cfg.type.u_env = MlpSpec{2, {36, 36}, 1, nets::Activation::Softplus};
        cfg.type.u_pair = MlpSpec{4, {36, 36}, 1, nets::Activation::Softplus};
    } else {
        // States arrive in global coordinates, so the transforms reduce to
        // identities; no environment field, only the pair term. Width picked
        // to land near the reported budget for the three-body model.
        cfg.type.transform = TransformKind::Identity;
        cfg.type.env_potential = PotentialKind::None;
        cfg.type.pair_potential = PotentialKind::Mlp;
        cfg.type.u_pair = MlpSpec{4, {71, 71}, 1, nets::Activation::Softplus};
    }
    cfg.validate();
    return cfg;
}

ModelConfig default_baseline_config(const SystemSpec& spec) {
    ModelConfig cfg;
    cfg.kind = ModelKind::DirectMlp;
    cfg.system = spec;
    const int qdim = spec.q_dim();
    const int width = spec.kind == SystemKind::PendulumChain ? 200 : 190;
    cfg.direct_mlp = MlpSpec{2 * qdim, {width, width}, qdim, nets::Activation::Softplus};
    cfg.validate();
    return cfg;
}

ModelConfig default_monolithic_config(const SystemSpec& spec) {
    ModelConfig cfg;
    cfg.kind = ModelKind::Monolithic;
    cfg.system = spec;
    const int qdim = spec.q_dim();
    const int width = spec.kind == SystemKind::PendulumChain ? 75 : 68;
    cfg.monolithic_mlp = MlpSpec{2 * qdim, {width, width}, 1, nets::Activation::Softplus};
    cfg.validate();
    return cfg;
}

ModelConfig analytic_plugin_config(const SystemSpec& spec) {
    spec.validate();
    for (double m : spec.masses)
        if (m != 1.0)
            throw std::invalid_argument("analytic_plugin_config: unit masses required");
    ModelConfig cfg;
    cfg.kind = ModelKind::Modular;
    cfg.system = spec;
    cfg.el_epsilon = 0.0;
    if (spec.kind == SystemKind::PendulumChain) {
        for (double l : spec.lengths)
            if (l != spec.lengths[0])
                throw std::invalid_argument(
                    "analytic_plugin_config: one shared element type needs equal lengths");
        cfg.type.transform = TransformKind::AnalyticChain;
        cfg.type.analytic_length = spec.lengths[0];
        cfg.type.env_potential = PotentialKind::AnalyticGravityHeight;
        cfg.type.analytic_g = spec.g;
        cfg.type.pair_potential = PotentialKind::None;
    } else {
        cfg.type.transform = TransformKind::Identity;
        cfg.type.env_potential = PotentialKind::None;
        cfg.type.pair_potential = PotentialKind::AnalyticInverseDistance;
        cfg.type.analytic_G = spec.G;
    }
    cfg.validate();
    return cfg;
}

namespace {

bool has_transform_nets(const ModelConfig& cfg) {
    return cfg.type.transform == TransformKind::Mlp;
}

}  // namespace

std::vector<std::string> expected_param_names(const ModelConfig& cfg) {
    std::vector<std::string> names;
    const auto add_mlp = [&](const std::string& prefix, const MlpSpec& spec) {
        const std::size_t layers = spec.hidden.size() + 1;
        for (std::size_t l = 0; l < layers; ++l) {
            names.push_back(prefix + ".w" + std::to_string(l));
            names.push_back(prefix + ".b" + std::to_string(l));
        }
    };
    switch (cfg.kind) {
        case ModelKind::Modular:
            if (has_transform_nets(cfg)) {
                add_mlp("tq", cfg.type.tq);
                if (!cfg.type.differentiate_tq) add_mlp("tqd", cfg.type.tqd);
            }
            if (cfg.type.env_potential == PotentialKind::Mlp) add_mlp("u_env", cfg.type.u_env);
            if (cfg.type.pair_potential == PotentialKind::Mlp) add_mlp("u_pair", cfg.type.u_pair);
            names.push_back("log_mass");
            if (cfg.type.env_potential != PotentialKind::None) names.push_back("c1");
            if (cfg.type.pair_potential != PotentialKind::None) names.push_back("c2");
            break;
        case ModelKind::DirectMlp:
            add_mlp("f", cfg.direct_mlp);
            break;
        case ModelKind::Monolithic:
            add_mlp("L", cfg.monolithic_mlp);
            break;
    }
    return names;
}

std::int64_t count_params(const ModelConfig& cfg) {
    std::int64_t total = 0;
    switch (cfg.kind) {
        case ModelKind::Modular:
            if (has_transform_nets(cfg)) {
                total += cfg.type.tq.param_count();
                if (!cfg.type.differentiate_tq) total += cfg.type.tqd.param_count();
            }
            if (cfg.type.env_potential == PotentialKind::Mlp)
                total += cfg.type.u_env.param_count();
            if (cfg.type.pair_potential == PotentialKind::Mlp)
                total += cfg.type.u_pair.param_count();
            total += 1;  // log-mass
            if (cfg.type.env_potential != PotentialKind::None) total += 1;  // c1
            if (cfg.type.pair_potential != PotentialKind::None) total += 1;  // c2
            break;
        case ModelKind::DirectMlp:
            total += cfg.direct_mlp.param_count();
            break;
        case ModelKind::Monolithic:
            total += cfg.monolithic_mlp.param_count();
            break;
    }
    return total;
}

ParameterStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParameterStore store;
    const auto sub_seed = [&](std::uint64_t k) { return Rng::stream(seed, k).next_u64(); };
    switch (cfg.kind) {
        case ModelKind::Modular:
            if (has_transform_nets(cfg)) {
                nets::init_mlp(store, "tq", cfg.type.tq, sub_seed(1));
                if (!cfg.type.differentiate_tq) {
                    nets::init_mlp(store, "tqd", cfg.type.tqd, sub_seed(2));
                    // Unit output bias gives the velocity map rod-length-order
                    // Jacobians, keeping the initial mass matrix away from
                    // singular and early accelerations sane.
                    auto& out_bias =
                        store.at("tqd.b" + std::to_string(cfg.type.tqd.hidden.size()));
                    std::fill(out_bias.begin(), out_bias.end(), 1.0);
                }
            }
            if (cfg.type.env_potential == PotentialKind::Mlp)
                nets::init_mlp(store, "u_env", cfg.type.u_env, sub_seed(3));
            if (cfg.type.pair_potential == PotentialKind::Mlp)
                nets::init_mlp(store, "u_pair", cfg.type.u_pair, sub_seed(4));
            store.add("log_mass", {0.0});  // unit mass; positivity is structural
            if (cfg.type.env_potential != PotentialKind::None) store.add("c1", {1.0});
            if (cfg.type.pair_potential != PotentialKind::None) store.add("c2", {1.0});
            break;
        case ModelKind::DirectMlp:
            nets::init_mlp(store, "f", cfg.direct_mlp, sub_seed(5));
            break;
        case ModelKind::Monolithic:
            nets::init_mlp(store, "L", cfg.monolithic_mlp, sub_seed(6));
            break;
    }
    if (store.total_count() != count_params(cfg))
        throw std::logic_error("init_params: count formula does not match enumeration");
    return store;
}

namespace {

void append_mlp_params(std::vector<NodeId>& all, const MlpNodes& nodes) {
    for (std::size_t l = 0; l < nodes.weights.size(); ++l) {
        all.insert(all.end(), nodes.weights[l].begin(), nodes.weights[l].end());
        all.insert(all.end(), nodes.biases[l].begin(), nodes.biases[l].end());
    }
}

struct ModularBits {
    MlpNodes net;  // direct/monolithic MLP
    MlpNodes tq, tqd, u_env, u_pair;
    NodeId log_mass = -1, c1 = -1, c2 = -1;
};

// Transform every element to global coordinates along the tree, assemble
// U and T from the shared element pieces, return L = T - U.
NodeId emit_modular_lagrangian(Graph& g, const ModelConfig& cfg, const ComputationTree& tree,
                               const ModularBits& bits, std::span<const NodeId> q,
                               std::span<const NodeId> qd, Program& prog) {
    const auto n = static_cast<std::size_t>(cfg.system.n);
    const auto qe = static_cast<std::size_t>(cfg.q_dim_per_element());
    const auto xd = static_cast<std::size_t>(cfg.x_dim());
    const ElementType& et = cfg.type;

    const NodeId mass = g.exp(bits.log_mass);
    const NodeId zero = g.constant(0.0);

    std::vector<std::vector<NodeId>> x(n, std::vector<NodeId>(xd, zero));
    std::vector<std::vector<NodeId>> v(n, std::vector<NodeId>(xd, zero));

    for (int idx : tree.order) {
        const auto i = static_cast<std::size_t>(idx);
        const int p = tree.parent[i];
        const std::span<const NodeId> qi(q.data() + i * qe, qe);
        const std::span<const NodeId> qdi(qd.data() + i * qe, qe);

        if (et.transform == TransformKind::Identity) {
            for (std::size_t c = 0; c < xd; ++c) {
                x[i][c] = qi[c];
                v[i][c] = qdi[c];
            }
            continue;
        }
        std::vector<NodeId> offset(xd);
        std::vector<NodeId> jac(xd * qe);  // row-major d x_c / d q_e
        if (et.transform == TransformKind::Mlp) {
            const auto out = nets::mlp_forward(g, et.tq, bits.tq, qi);
            for (std::size_t c = 0; c < xd; ++c) offset[c] = out[c];
            if (et.differentiate_tq) {
                for (std::size_t c = 0; c < xd; ++c) {
                    const auto row = g.grad(out[c], qi);
                    for (std::size_t e = 0; e < qe; ++e) jac[c * qe + e] = row[e];
                }
            } else {
                const auto jout = nets::mlp_forward(g, et.tqd, bits.tqd, qi);
                for (std::size_t k = 0; k < xd * qe; ++k) jac[k] = jout[k];
            }
        } else {  // AnalyticChain: x = (l sin th, -l cos th) relative to the joint
            const NodeId l = g.constant(et.analytic_length);
            offset[0] = g.mul(l, g.sin(qi[0]));
            offset[1] = g.neg(g.mul(l, g.cos(qi[0])));
            jac[0] = g.mul(l, g.cos(qi[0]));
            jac[1] = g.mul(l, g.sin(qi[0]));
        }
        for (std::size_t c = 0; c < xd; ++c) {
            x[i][c] = p >= 0 ? g.add(offset[c], x[static_cast<std::size_t>(p)][c]) : offset[c];
            std::vector<NodeId> terms;
            for (std::size_t e = 0; e < qe; ++e) terms.push_back(g.mul(jac[c * qe + e], qdi[e]));
            if (p >= 0) terms.push_back(v[static_cast<std::size_t>(p)][c]);
            v[i][c] = terms.size() == 1 ? terms[0] : g.sum(terms);
        }
    }
    prog.x_nodes = x;
    prog.xd_nodes = v;

    std::vector<NodeId> u_terms;
    if (et.env_potential != PotentialKind::None) {
        const NodeId c1m = g.mul(bits.c1, mass);
        for (std::size_t i = 0; i < n; ++i) {
            NodeId ui;
            if (et.env_potential == PotentialKind::Mlp) {
                ui = nets::mlp_forward(g, et.u_env, bits.u_env, x[i])[0];
            } else {  // AnalyticGravityHeight: per-unit-mass field energy g * y
                ui = g.mul(g.constant(et.analytic_g), x[i][1]);
            }
            u_terms.push_back(g.mul(c1m, ui));
        }
    }
    if (et.pair_potential != PotentialKind::None) {
        const NodeId c2mm_half = g.mul(bits.c2, g.mul(g.constant(0.5), g.mul(mass, mass)));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                NodeId uij;
                if (et.pair_potential == PotentialKind::Mlp) {
                    std::vector<NodeId> both(x[i]);
                    both.insert(both.end(), x[j].begin(), x[j].end());
                    uij = nets::mlp_forward(g, et.u_pair, bits.u_pair, both)[0];
                } else {  // AnalyticInverseDistance: -G / r_ij per unit mass product
                    const NodeId dx = g.sub(x[i][0], x[j][0]);
                    const NodeId dy = g.sub(x[i][1], x[j][1]);
                    const NodeId r = g.sqrt_pos(g.add(g.pow_int(dx, 2), g.pow_int(dy, 2)));
                    uij = g.neg(g.mul(g.constant(et.analytic_G), g.recip(r)));
                }
                u_terms.push_back(g.mul(c2mm_half, uij));
            }
    }
    const NodeId U = u_terms.empty() ? zero : g.sum(u_terms);

    const NodeId half_mass = g.mul(g.constant(0.5), mass);
    std::vector<NodeId> t_terms;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<NodeId> sq;
        for (std::size_t c = 0; c < xd; ++c) sq.push_back(g.pow_int(v[i][c], 2));
        t_terms.push_back(g.mul(half_mass, g.sum(sq)));
    }
    const NodeId T = g.sum(t_terms);
    prog.kinetic = T;
    prog.potential = U;
    return g.sub(T, U);
}

}  // namespace

Program build_program(const ModelConfig& cfg, const ComputationTree& tree) {
    cfg.validate();
    tree.validate();
    Program p;
    Graph& g = p.g;

    ModularBits bits;
    switch (cfg.kind) {
        case ModelKind::Modular:
            if (has_transform_nets(cfg)) {
                bits.tq = nets::mlp_param_nodes(g, cfg.type.tq);
                append_mlp_params(p.param_nodes, bits.tq);
                if (!cfg.type.differentiate_tq) {
                    bits.tqd = nets::mlp_param_nodes(g, cfg.type.tqd);
                    append_mlp_params(p.param_nodes, bits.tqd);
                }
            }
            if (cfg.type.env_potential == PotentialKind::Mlp) {
                bits.u_env = nets::mlp_param_nodes(g, cfg.type.u_env);
                append_mlp_params(p.param_nodes, bits.u_env);
            }
            if (cfg.type.pair_potential == PotentialKind::Mlp) {
                bits.u_pair = nets::mlp_param_nodes(g, cfg.type.u_pair);
                append_mlp_params(p.param_nodes, bits.u_pair);
            }
            bits.log_mass = g.param();
            p.param_nodes.push_back(bits.log_mass);
            if (cfg.type.env_potential != PotentialKind::None) {
                bits.c1 = g.param();
                p.param_nodes.push_back(bits.c1);
            }
            if (cfg.type.pair_potential != PotentialKind::None) {
                bits.c2 = g.param();
                p.param_nodes.push_back(bits.c2);
            }
            break;
        case ModelKind::DirectMlp:
            bits.net = nets::mlp_param_nodes(g, cfg.direct_mlp);
            append_mlp_params(p.param_nodes, bits.net);
            break;
        case ModelKind::Monolithic:
            bits.net = nets::mlp_param_nodes(g, cfg.monolithic_mlp);
            append_mlp_params(p.param_nodes, bits.net);
            break;
    }

    const auto qdim = static_cast<std::size_t>(cfg.q_dim());
    for (std::size_t i = 0; i < qdim; ++i) p.q_in.push_back(g.input());
    for (std::size_t i = 0; i < qdim; ++i) p.qd_in.push_back(g.input());

    switch (cfg.kind) {
        case ModelKind::Modular:
            p.lagrangian = emit_modular_lagrangian(g, cfg, tree, bits, p.q_in, p.qd_in, p);
            p.has_el = true;
            break;
        case ModelKind::Monolithic: {
            std::vector<NodeId> zin(p.q_in);
            zin.insert(zin.end(), p.qd_in.begin(), p.qd_in.end());
            p.lagrangian = nets::mlp_forward(g, cfg.monolithic_mlp, bits.net, zin)[0];
            p.has_el = true;
            break;
        }
        case ModelKind::DirectMlp: {
            std::vector<NodeId> zin(p.q_in);
            zin.insert(zin.end(), p.qd_in.begin(), p.qd_in.end());
            p.qdd_nodes = nets::mlp_forward(g, cfg.direct_mlp, bits.net, zin);
            p.qdd_sched = g.make_schedule(p.qdd_nodes);
            return p;
        }
    }
    p.terms = autodiff::euler_lagrange_terms(g, p.lagrangian, p.q_in, p.qd_in);
    p.deriv_sched = autodiff::derivative_schedule(g, p.terms);
    p.qdd_nodes = autodiff::acceleration_nodes(g, p.terms, cfg.el_epsilon);
    p.qdd_sched = g.make_schedule(p.qdd_nodes);
    return p;
}

DynamicsModel::DynamicsModel(ModelConfig cfg, std::shared_ptr<ParameterStore> params)
    : cfg_(std::move(cfg)), tree_(build_tree(cfg_.system)), params_(std::move(params)) {
    const auto names = expected_param_names(cfg_);
    if (params_->names() != names)
        throw std::invalid_argument("DynamicsModel: parameter store does not match config");
    prog_ = build_program(cfg_, tree_);
    refresh_params();
}

DynamicsModel DynamicsModel::initialize(const ModelConfig& cfg, std::uint64_t seed) {
    auto store = std::make_shared<ParameterStore>(init_params(cfg, seed));
    return DynamicsModel(cfg, std::move(store));
}

std::int64_t DynamicsModel::param_count() const { return count_params(cfg_); }

void DynamicsModel::refresh_params() {
    const auto flat = params_->flatten();
    if (flat.size() != prog_.param_nodes.size())
        throw std::logic_error("DynamicsModel: parameter slot mismatch");
    prog_.g.set_params(flat);
}

bool DynamicsModel::forward(std::span<const double> q, std::span<const double> qd,
                            std::span<double> out) {
    const auto qdim = static_cast<std::size_t>(cfg_.q_dim());
    if (q.size() != qdim || qd.size() != qdim || out.size() != qdim)
        throw std::invalid_argument("DynamicsModel::forward: dimension mismatch");
    // Chain dynamics are 2pi-periodic per angle; long rollouts accumulate
    // whole revolutions, so the nets always see the canonical angle.
    const bool wrap = cfg_.system.kind == SystemKind::PendulumChain;
    for (std::size_t i = 0; i < qdim; ++i) {
        double qi = q[i];
        if (wrap) {
            qi = std::remainder(qi, 2.0 * std::numbers::pi);
            if (qi <= -std::numbers::pi) qi += 2.0 * std::numbers::pi;
        }
        prog_.g.set_input(prog_.q_in[i], qi);
        prog_.g.set_input(prog_.qd_in[i], qd[i]);
    }
    if (prog_.has_el) {
        const autodiff::EulerLagrangeConfig elcfg{cfg_.el_epsilon};
        return autodiff::solve_acceleration(prog_.g, prog_.terms, prog_.deriv_sched, elcfg, out);
    }
    prog_.g.eval_schedule(prog_.qdd_sched);
    bool ok = true;
    for (std::size_t i = 0; i < qdim; ++i) {
        out[i] = prog_.g.value(prog_.qdd_nodes[i]);
        ok = ok && std::isfinite(out[i]);
    }
    return ok;
}

integrators::OdeFn DynamicsModel::ode() {
    const auto dim = static_cast<std::size_t>(cfg_.q_dim());
    return [this, dim](double, const integrators::Vec& z, integrators::Vec& dz) {
        dz.resize(2 * dim);
        std::copy(z.begin() + static_cast<std::ptrdiff_t>(dim), z.end(), dz.begin());
        return forward(std::span<const double>(z.data(), dim),
                       std::span<const double>(z.data() + dim, dim),
                       std::span<double>(dz.data() + dim, dim));
    };
}

DynamicsModel extend_model(const DynamicsModel& base, const SystemSpec& new_spec) {
    new_spec.validate();
    if (base.config().kind != ModelKind::Modular)
        throw std::invalid_argument("extend_model: only the modular model is reorganizable");
    if (new_spec.kind != base.config().system.kind)
        throw std::invalid_argument("extend_model: element type not present in model");
    ModelConfig cfg = base.config();
    cfg.system = new_spec;
    return DynamicsModel(cfg, base.shared_params());
}

bool check_scale_invariance(DynamicsModel& model, double alpha, std::span<const double> q,
                            std::span<const double> qd) {
    if (!(alpha > 0.0)) throw std::invalid_argument("check_scale_invariance: alpha must be > 0");
    Program& p = model.program();
    if (!p.has_el)
        throw std::invalid_argument("check_scale_invariance: model has no Lagrangian");
    Graph& g = p.g;
    const NodeId scaled = g.mul(g.constant(alpha), p.lagrangian);
    const auto terms2 = autodiff::euler_lagrange_terms(g, scaled, p.q_in, p.qd_in);
    const auto sched1 = autodiff::derivative_schedule(g, p.terms);
    const auto sched2 = autodiff::derivative_schedule(g, terms2);
    for (std::size_t i = 0; i < p.q_in.size(); ++i) {
        g.set_input(p.q_in[i], q[i]);
        g.set_input(p.qd_in[i], qd[i]);
    }
    const autodiff::EulerLagrangeConfig cfg{0.0};
    linalg::Vec a1(q.size(), 0.0), a2(q.size(), 0.0);
    if (!autodiff::solve_acceleration(g, p.terms, sched1, cfg, a1)) return false;
    if (!autodiff::solve_acceleration(g, terms2, sched2, cfg, a2)) return false;
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        diff = std::max(diff, std::abs(a1[i] - a2[i]));
        norm = std::max(norm, std::max(std::abs(a1[i]), std::abs(a2[i])));
    }
    return diff <= 1e-10 * norm + 1e-14;
}

// --- checkpoint io -----------------------------------------------------------

namespace {

json mlp_to_json(const MlpSpec& spec) {
    return json{{"in", spec.in_dim},
                {"hidden", spec.hidden},
                {"out", spec.out_dim},
                {"activation", nets::activation_name(spec.activation)}};
}

MlpSpec mlp_from_json(const json& j) {
    MlpSpec spec;
    spec.in_dim = j.at("in").get<int>();
    spec.hidden = j.at("hidden").get<std::vector<int>>();
    spec.out_dim = j.at("out").get<int>();
    spec.activation = nets::activation_from_name(j.at("activation").get<std::string>());
    return spec;
}

const char* transform_name(TransformKind k) {
    switch (k) {
        case TransformKind::Identity: return "identity";
        case TransformKind::Mlp: return "mlp";
        case TransformKind::AnalyticChain: return "analytic-chain";
    }
    return "?";
}

TransformKind transform_from_name(const std::string& s) {
    if (s == "identity") return TransformKind::Identity;
    if (s == "mlp") return TransformKind::Mlp;
    if (s == "analytic-chain") return TransformKind::AnalyticChain;
    throw std::invalid_argument("unknown transform kind: " + s);
}

const char* potential_name(PotentialKind k) {
    switch (k) {
        case PotentialKind::None: return "none";
        case PotentialKind::Mlp: return "mlp";
        case PotentialKind::AnalyticGravityHeight: return "analytic-gravity-height";
        case PotentialKind::AnalyticInverseDistance: return "analytic-inverse-distance";
    }
    return "?";
}

PotentialKind potential_from_name(const std::string& s) {
    if (s == "none") return PotentialKind::None;
    if (s == "mlp") return PotentialKind::Mlp;
    if (s == "analytic-gravity-height") return PotentialKind::AnalyticGravityHeight;
    if (s == "analytic-inverse-distance") return PotentialKind::AnalyticInverseDistance;
    throw std::invalid_argument("unknown potential kind: " + s);
}

json config_to_json(const ModelConfig& cfg, const ComputationTree& tree) {
    json j;
    j["system"] = json::parse(systems::spec_to_json_string(cfg.system));
    j["el_epsilon"] = cfg.el_epsilon;
    j["tree_parents"] = tree.parent;
    switch (cfg.kind) {
        case ModelKind::Modular: {
            json t;
            t["transform"] = transform_name(cfg.type.transform);
            t["differentiate_tq"] = cfg.type.differentiate_tq;
            t["env_potential"] = potential_name(cfg.type.env_potential);
            t["pair_potential"] = potential_name(cfg.type.pair_potential);
            if (cfg.type.transform == TransformKind::Mlp) {
                t["tq"] = mlp_to_json(cfg.type.tq);
                if (!cfg.type.differentiate_tq) t["tqd"] = mlp_to_json(cfg.type.tqd);
            }
            if (cfg.type.env_potential == PotentialKind::Mlp)
                t["u_env"] = mlp_to_json(cfg.type.u_env);
            if (cfg.type.pair_potential == PotentialKind::Mlp)
                t["u_pair"] = mlp_to_json(cfg.type.u_pair);
            t["analytic_length"] = cfg.type.analytic_length;
            t["analytic_g"] = cfg.type.analytic_g;
            t["analytic_G"] = cfg.type.analytic_G;
            j["element_type"] = t;
            break;
        }
        case ModelKind::DirectMlp:
            j["direct_mlp"] = mlp_to_json(cfg.direct_mlp);
            break;
        case ModelKind::Monolithic:
            j["monolithic_mlp"] = mlp_to_json(cfg.monolithic_mlp);
            break;
    }
    return j;
}

ModelConfig config_from_json(ModelKind kind, const json& j) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.system = systems::spec_from_json_string(j.at("system").dump());
    cfg.el_epsilon = j.at("el_epsilon").get<double>();
    switch (kind) {
        case ModelKind::Modular: {
            const json& t = j.at("element_type");
            cfg.type.transform = transform_from_name(t.at("transform").get<std::string>());
            cfg.type.differentiate_tq = t.at("differentiate_tq").get<bool>();
            cfg.type.env_potential = potential_from_name(t.at("env_potential").get<std::string>());
            cfg.type.pair_potential =
                potential_from_name(t.at("pair_potential").get<std::string>());
            if (cfg.type.transform == TransformKind::Mlp) {
                cfg.type.tq = mlp_from_json(t.at("tq"));
                if (!cfg.type.differentiate_tq) cfg.type.tqd = mlp_from_json(t.at("tqd"));
            }
            if (cfg.type.env_potential == PotentialKind::Mlp)
                cfg.type.u_env = mlp_from_json(t.at("u_env"));
            if (cfg.type.pair_potential == PotentialKind::Mlp)
                cfg.type.u_pair = mlp_from_json(t.at("u_pair"));
            cfg.type.analytic_length = t.at("analytic_length").get<double>();
            cfg.type.analytic_g = t.at("analytic_g").get<double>();
            cfg.type.analytic_G = t.at("analytic_G").get<double>();
            break;
        }
        case ModelKind::DirectMlp:
            cfg.direct_mlp = mlp_from_json(j.at("direct_mlp"));
            break;
        case ModelKind::Monolithic:
            cfg.monolithic_mlp = mlp_from_json(j.at("monolithic_mlp"));
            break;
    }
    cfg.validate();
    return cfg;
}

}  // namespace

void save_checkpoint(const DynamicsModel& model, const std::string& path, std::uint64_t seed,
                     const std::string& train_meta_json, const std::string& config_echo) {
    json j;
    j["kind"] = model_kind_name(model.config().kind);
    j["config"] = config_to_json(model.config(), model.tree());
    json params = json::object();
    for (const auto& name : model.params().names()) params[name] = model.params().at(name);
    j["params"] = params;
    j["seed"] = seed;
    j["train-meta"] = train_meta_json.empty() ? json::object() : json::parse(train_meta_json);
    if (!config_echo.empty()) j["effective-config"] = json::parse(config_echo);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << j.dump(1) << '\n';
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    json j;
    in >> j;
    const ModelKind kind = model_kind_from_name(j.at("kind").get<std::string>());
    const ModelConfig cfg = config_from_json(kind, j.at("config"));
    auto store = std::make_shared<ParameterStore>();
    const json& params = j.at("params");
    for (const auto& name : expected_param_names(cfg)) {
        if (!params.contains(name))
            throw std::runtime_error("load_checkpoint: missing tensor " + name);
        store->add(name, params.at(name).get<std::vector<double>>());
    }
    return Checkpoint{DynamicsModel(cfg, std::move(store)), j.at("seed").get<std::uint64_t>(),
                      j.at("train-meta").dump()};
}

}  // namespace modlanet::model
