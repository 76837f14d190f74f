#include "modlanet/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace modlanet::autodiff {

const char* op_name(Op op) {
    switch (op) {
        case Op::Const: return "const";
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::Neg: return "neg";
        case Op::Recip: return "recip";
        case Op::Sin: return "sin";
        case Op::Cos: return "cos";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Tanh: return "tanh";
        case Op::Softplus: return "softplus";
        case Op::PowInt: return "pow-int";
        case Op::Sum: return "sum";
    }
    return "?";
}

namespace {

double ipow(double x, int k) {
    if (k < 0) return 1.0 / ipow(x, -k);
    double r = 1.0, base = x;
    while (k > 0) {
        if (k & 1) r *= base;
        base *= base;
        k >>= 1;
    }
    return r;
}

double softplus_stable(double x) {
    // max(x, 0) + log1p(exp(-|x|))
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

NodeId Graph::emit(Node n) {
    nodes_.push_back(n);
    values_.push_back(0.0);
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::check_id(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw std::invalid_argument("node id out of range");
}

NodeId Graph::constant(double value) {
    const auto key = std::bit_cast<std::uint64_t>(value);
    if (auto it = const_cache_.find(key); it != const_cache_.end()) return it->second;
    consts_.push_back(value);
    const NodeId id = emit({Op::Const, static_cast<NodeId>(consts_.size() - 1), -1});
    values_[static_cast<std::size_t>(id)] = value;
    const_cache_.emplace(key, id);
    return id;
}

NodeId Graph::input() {
    input_vals_.push_back(0.0);
    input_bound_.push_back(0);
    return emit({Op::Input, static_cast<NodeId>(input_vals_.size() - 1), -1});
}

NodeId Graph::param() {
    param_vals_.push_back(0.0);
    param_bound_.push_back(0);
    return emit({Op::Param, static_cast<NodeId>(param_vals_.size() - 1), -1});
}

NodeId Graph::pow_int(NodeId a, int k) {
    check_id(a);
    return emit({Op::PowInt, a, static_cast<NodeId>(k)});
}

NodeId Graph::sum(std::span<const NodeId> args) {
    for (NodeId id : args) check_id(id);
    const auto offset = static_cast<NodeId>(sum_args_.size());
    sum_args_.insert(sum_args_.end(), args.begin(), args.end());
    return emit({Op::Sum, offset, static_cast<NodeId>(args.size())});
}

NodeId Graph::build(Op op, std::span<const NodeId> inputs, int aux) {
    for (NodeId id : inputs) check_id(id);
    const auto need = [&](std::size_t n) {
        if (inputs.size() != n)
            throw std::invalid_argument(std::string(op_name(op)) + ": arity mismatch");
    };
    switch (op) {
        case Op::Add: need(2); return add(inputs[0], inputs[1]);
        case Op::Mul: need(2); return mul(inputs[0], inputs[1]);
        case Op::Neg: need(1); return neg(inputs[0]);
        case Op::Recip: need(1); return recip(inputs[0]);
        case Op::Sin: need(1); return sin(inputs[0]);
        case Op::Cos: need(1); return cos(inputs[0]);
        case Op::Exp: need(1); return exp(inputs[0]);
        case Op::Log: need(1); return log(inputs[0]);
        case Op::Tanh: need(1); return tanh(inputs[0]);
        case Op::Softplus: need(1); return softplus(inputs[0]);
        case Op::PowInt: need(1); return pow_int(inputs[0], aux);
        case Op::Sum: return sum(inputs);
        case Op::Const:
        case Op::Input:
        case Op::Param:
            throw std::invalid_argument(std::string(op_name(op)) + ": use dedicated factory");
    }
    throw std::invalid_argument("unknown op-kind");
}

void Graph::set_input(NodeId id, double v) {
    check_id(id);
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op != Op::Input) throw std::invalid_argument("set_input: not an input node");
    input_vals_[static_cast<std::size_t>(n.a)] = v;
    input_bound_[static_cast<std::size_t>(n.a)] = 1;
}

void Graph::set_param(NodeId id, double v) {
    check_id(id);
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op != Op::Param) throw std::invalid_argument("set_param: not a param node");
    param_vals_[static_cast<std::size_t>(n.a)] = v;
    param_bound_[static_cast<std::size_t>(n.a)] = 1;
}

void Graph::set_params(std::span<const double> flat) {
    if (flat.size() != param_vals_.size())
        throw std::invalid_argument("set_params: size mismatch");
    std::copy(flat.begin(), flat.end(), param_vals_.begin());
    std::fill(param_bound_.begin(), param_bound_.end(), char{1});
}

Schedule Graph::make_schedule(std::span<const NodeId> outputs) const {
    if (outputs.empty()) return {};
    std::vector<char> mark(nodes_.size(), 0);
    NodeId hi = -1;
    for (NodeId id : outputs) {
        check_id(id);
        mark[static_cast<std::size_t>(id)] = 1;
        hi = std::max(hi, id);
    }
    for (NodeId id = hi; id >= 0; --id) {
        if (!mark[static_cast<std::size_t>(id)]) continue;
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        switch (n.op) {
            case Op::Const:
            case Op::Input:
            case Op::Param:
                break;
            case Op::Sum:
                for (NodeId k = 0; k < n.b; ++k)
                    mark[static_cast<std::size_t>(sum_args_[static_cast<std::size_t>(n.a + k)])] = 1;
                break;
            case Op::Add:
            case Op::Mul:
                mark[static_cast<std::size_t>(n.a)] = 1;
                mark[static_cast<std::size_t>(n.b)] = 1;
                break;
            default:
                mark[static_cast<std::size_t>(n.a)] = 1;
                break;
        }
    }
    Schedule sched;
    for (std::size_t id = 0; id <= static_cast<std::size_t>(hi); ++id)
        if (mark[id]) sched.push_back(static_cast<NodeId>(id));
    return sched;
}

void Graph::eval_schedule(const Schedule& sched) {
    double* __restrict v = values_.data();
    const Node* __restrict nodes = nodes_.data();
    const NodeId* __restrict args_pool = sum_args_.data();
    const double* __restrict consts = consts_.data();
    const double* __restrict inputs = input_vals_.data();
    const double* __restrict params = param_vals_.data();
    const NodeId* ids = sched.data();
    const std::size_t count = sched.size();
    for (std::size_t k = 0; k < count; ++k) {
        const NodeId id = ids[k];
        const Node n = nodes[id];
        double r;
        switch (n.op) {
            case Op::Mul: r = v[n.a] * v[n.b]; break;
            case Op::Add: r = v[n.a] + v[n.b]; break;
            case Op::Sum: {
                double s0 = 0.0, s1 = 0.0;
                const NodeId* args = args_pool + n.a;
                NodeId j = 0;
                for (; j + 1 < n.b; j += 2) {
                    s0 += v[args[j]];
                    s1 += v[args[j + 1]];
                }
                if (j < n.b) s0 += v[args[j]];
                r = s0 + s1;
                break;
            }
            case Op::Neg: r = -v[n.a]; break;
            case Op::Recip: r = 1.0 / v[n.a]; break;
            case Op::Exp: r = std::exp(v[n.a]); break;
            case Op::Softplus: r = softplus_stable(v[n.a]); break;
            case Op::PowInt: r = ipow(v[n.a], n.b); break;
            case Op::Sin: r = std::sin(v[n.a]); break;
            case Op::Cos: r = std::cos(v[n.a]); break;
            case Op::Log: r = std::log(v[n.a]); break;
            case Op::Tanh: r = std::tanh(v[n.a]); break;
            case Op::Const: r = consts[n.a]; break;
            case Op::Input: r = inputs[n.a]; break;
            case Op::Param: r = params[n.a]; break;
            default: r = 0.0; break;
        }
        v[id] = r;
    }
}

double Graph::evaluate(NodeId output) {
    check_id(output);
    const NodeId outs[1] = {output};
    const Schedule sched = make_schedule(outs);
    for (NodeId id : sched) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.op == Op::Input && !input_bound_[static_cast<std::size_t>(n.a)])
            throw EvalError("evaluate: unbound input node " + std::to_string(id));
        if (n.op == Op::Param && !param_bound_[static_cast<std::size_t>(n.a)])
            throw EvalError("evaluate: unbound param node " + std::to_string(id));
    }
    eval_schedule(sched);
    for (NodeId id : sched) {
        if (!std::isfinite(values_[static_cast<std::size_t>(id)]))
            throw EvalError(std::string("evaluate: non-finite value in ") +
                            op_name(nodes_[static_cast<std::size_t>(id)].op) + " node " +
                            std::to_string(id));
    }
    return values_[static_cast<std::size_t>(output)];
}

std::vector<NodeId> Graph::grad(NodeId output, std::span<const NodeId> wrt) {
    check_id(output);
    for (NodeId id : wrt) check_id(id);
    const std::size_t n0 = nodes_.size();

    // Restrict the reverse pass to nodes that are both ancestors of the
    // output and descendants of some wrt variable; everything else is a
    // constant for this derivative and would only bloat the graph.
    std::vector<char> anc(n0, 0), desc(n0, 0);
    anc[static_cast<std::size_t>(output)] = 1;
    for (NodeId id = output; id >= 0; --id) {
        if (!anc[static_cast<std::size_t>(id)]) continue;
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        switch (n.op) {
            case Op::Const:
            case Op::Input:
            case Op::Param:
                break;
            case Op::Sum:
                for (NodeId k = 0; k < n.b; ++k)
                    anc[static_cast<std::size_t>(sum_args_[static_cast<std::size_t>(n.a + k)])] = 1;
                break;
            case Op::Add:
            case Op::Mul:
                anc[static_cast<std::size_t>(n.a)] = 1;
                anc[static_cast<std::size_t>(n.b)] = 1;
                break;
            default:
                anc[static_cast<std::size_t>(n.a)] = 1;
                break;
        }
    }
    for (NodeId id : wrt) desc[static_cast<std::size_t>(id)] = 1;
    for (std::size_t id = 0; id < n0; ++id) {
        if (desc[id]) continue;
        const Node& n = nodes_[id];
        bool d = false;
        switch (n.op) {
            case Op::Const:
            case Op::Input:
            case Op::Param:
                break;
            case Op::Sum:
                for (NodeId k = 0; k < n.b && !d; ++k)
                    d = desc[static_cast<std::size_t>(sum_args_[static_cast<std::size_t>(n.a + k)])];
                break;
            case Op::Add:
            case Op::Mul:
                d = desc[static_cast<std::size_t>(n.a)] || desc[static_cast<std::size_t>(n.b)];
                break;
            default:
                d = desc[static_cast<std::size_t>(n.a)];
                break;
        }
        if (d) desc[id] = 1;
    }
    std::vector<char> live(n0, 0);
    for (std::size_t id = 0; id < n0; ++id) live[id] = anc[id] && desc[id];

    // CSR term lists: adjoint contributions flowing into each live node.
    const auto term_count = [&](const Node& n, NodeId src) -> int {
        // number of adjoint terms node `src`'s consumer `n` contributes per edge
        if (n.op == Op::PowInt && n.b == 0) return 0;
        (void)src;
        return 1;
    };
    std::vector<int> cap(n0 + 1, 0);
    const auto for_each_live_edge = [&](NodeId id, auto&& fn) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        switch (n.op) {
            case Op::Const:
            case Op::Input:
            case Op::Param:
                break;
            case Op::Sum:
                for (NodeId k = 0; k < n.b; ++k) {
                    NodeId v = sum_args_[static_cast<std::size_t>(n.a + k)];
                    if (live[static_cast<std::size_t>(v)]) fn(v, 0);
                }
                break;
            case Op::Add:
            case Op::Mul:
                if (live[static_cast<std::size_t>(n.a)]) fn(n.a, 0);
                if (live[static_cast<std::size_t>(n.b)]) fn(n.b, 1);
                break;
            default:
                if (live[static_cast<std::size_t>(n.a)]) fn(n.a, 0);
                break;
        }
    };
    for (std::size_t id = 0; id < n0; ++id) {
        if (!live[id]) continue;
        const Node& n = nodes_[id];
        for_each_live_edge(static_cast<NodeId>(id),
                           [&](NodeId v, int) { cap[static_cast<std::size_t>(v)] += term_count(n, v); });
    }
    if (live[static_cast<std::size_t>(output)]) cap[static_cast<std::size_t>(output)] += 1;
    std::vector<int> offset(n0 + 1, 0);
    for (std::size_t id = 0; id < n0; ++id) offset[id + 1] = offset[id] + cap[id];
    std::vector<NodeId> terms(static_cast<std::size_t>(offset[n0]), -1);
    std::vector<int> fill(n0, 0);
    const auto push_term = [&](NodeId v, NodeId term) {
        terms[static_cast<std::size_t>(offset[static_cast<std::size_t>(v)] +
                                       fill[static_cast<std::size_t>(v)]++)] = term;
    };

    const NodeId one = constant(1.0);
    const NodeId zero = constant(0.0);
    if (live[static_cast<std::size_t>(output)]) push_term(output, one);

    std::vector<NodeId> adj(n0, -1);
    const auto accumulate = [&](NodeId v) -> NodeId {
        const int cnt = fill[static_cast<std::size_t>(v)];
        const NodeId* t = terms.data() + offset[static_cast<std::size_t>(v)];
        if (cnt == 1) return t[0];
        if (cnt == 2) return add(t[0], t[1]);
        return sum(std::span<const NodeId>(t, static_cast<std::size_t>(cnt)));
    };

    for (NodeId id = output; id >= 0; --id) {
        const auto uid = static_cast<std::size_t>(id);
        if (!live[uid] || fill[uid] == 0) continue;
        const NodeId a = accumulate(id);
        adj[uid] = a;
        const Node n = nodes_[uid];  // copy: emissions may reallocate nodes_
        switch (n.op) {
            case Op::Const:
            case Op::Input:
            case Op::Param:
                break;
            case Op::Add:
                if (live[static_cast<std::size_t>(n.a)]) push_term(n.a, a);
                if (live[static_cast<std::size_t>(n.b)]) push_term(n.b, a);
                break;
            case Op::Sum:
                for (NodeId k = 0; k < n.b; ++k) {
                    NodeId v = sum_args_[static_cast<std::size_t>(n.a + k)];
                    if (live[static_cast<std::size_t>(v)]) push_term(v, a);
                }
                break;
            case Op::Mul:
                if (live[static_cast<std::size_t>(n.a)]) push_term(n.a, mul(a, n.b));
                if (live[static_cast<std::size_t>(n.b)]) push_term(n.b, mul(a, n.a));
                break;
            case Op::Neg:
                if (live[static_cast<std::size_t>(n.a)]) push_term(n.a, neg(a));
                break;
            case Op::Recip:
                if (live[static_cast<std::size_t>(n.a)])
                    push_term(n.a, neg(mul(a, mul(id, id))));
                break;
            case Op::Sin:
                if (live[static_cast<std::size_t>(n.a)]) push_term(n.a, mul(a, cos(n.a)));
                break;
            case Op::Cos:
                if (live[static_cast<std::size_t>(n.a)]) push_term(n.a, neg(mul(a, sin(n.a))));
                break;
            case Op::Exp:
                if (live[static_cast<std::size_t>(n.a)]) push_term(n.a, mul(a, id));
                break;
            case Op::Log:
                if (live[static_cast<std::size_t>(n.a)]) push_term(n.a, mul(a, recip(n.a)));
                break;
            case Op::Tanh:
                if (live[static_cast<std::size_t>(n.a)])
                    push_term(n.a, mul(a, add(one, neg(pow_int(id, 2)))));
                break;
            case Op::Softplus:
                // sigmoid via exp(x - softplus(x)): the exponent is <= 0, so
                // this form cannot overflow for extreme pre-activations
                if (live[static_cast<std::size_t>(n.a)])
                    push_term(n.a, mul(a, exp(add(n.a, neg(id)))));
                break;
            case Op::PowInt: {
                if (!live[static_cast<std::size_t>(n.a)]) break;
                const int k = n.b;
                if (k == 0) break;
                if (k == 1) {
                    push_term(n.a, a);
                } else {
                    push_term(n.a, mul(a, mul(constant(static_cast<double>(k)),
                                              pow_int(n.a, k - 1))));
                }
                break;
            }
        }
    }

    std::vector<NodeId> out;
    out.reserve(wrt.size());
    for (NodeId id : wrt) {
        const NodeId g = adj[static_cast<std::size_t>(id)];
        out.push_back(g >= 0 ? g : zero);
    }
    return out;
}

std::vector<std::vector<NodeId>> Graph::hessian(NodeId output, std::span<const NodeId> wrt) {
    const std::size_t d = wrt.size();
    std::vector<std::vector<NodeId>> H(d, std::vector<NodeId>(d, -1));
    const std::vector<NodeId> g1 = grad(output, wrt);
    for (std::size_t j = 0; j < d; ++j) {
        const std::span<const NodeId> tail(wrt.data() + j, d - j);
        const std::vector<NodeId> row = grad(g1[j], tail);
        for (std::size_t k = j; k < d; ++k) {
            H[j][k] = row[k - j];
            H[k][j] = row[k - j];
        }
    }
    return H;
}

// --- Euler-Lagrange ----------------------------------------------------------

EulerLagrangeTerms euler_lagrange_terms(Graph& g, NodeId lagrangian,
                                        std::span<const NodeId> q,
                                        std::span<const NodeId> qd) {
    if (q.size() != qd.size())
        throw std::invalid_argument("euler_lagrange_terms: dim(q) != dim(qd)");
    const std::size_t d = q.size();
    EulerLagrangeTerms t;
    t.q.assign(q.begin(), q.end());
    t.qd.assign(qd.begin(), qd.end());
    t.lagrangian = lagrangian;
    t.dLdq = g.grad(lagrangian, q);
    t.dLdqd = g.grad(lagrangian, qd);
    t.mass.assign(d, std::vector<NodeId>(d, -1));
    t.mixed.assign(d, std::vector<NodeId>(d, -1));
    for (std::size_t j = 0; j < d; ++j) {
        // One reverse pass per row covers the mass-matrix upper triangle and
        // the full mixed row d²L/dq̇_j dq_k.
        std::vector<NodeId> wrt(qd.begin() + static_cast<std::ptrdiff_t>(j), qd.end());
        wrt.insert(wrt.end(), q.begin(), q.end());
        const std::vector<NodeId> row = g.grad(t.dLdqd[j], wrt);
        for (std::size_t k = j; k < d; ++k) {
            t.mass[j][k] = row[k - j];
            t.mass[k][j] = row[k - j];
        }
        for (std::size_t k = 0; k < d; ++k) t.mixed[j][k] = row[(d - j) + k];
    }
    return t;
}

std::vector<NodeId> acceleration_nodes(Graph& g, const EulerLagrangeTerms& t, double eps) {
    const std::size_t d = t.q.size();
    std::vector<std::vector<NodeId>> A(d, std::vector<NodeId>(d));
    std::vector<NodeId> b(d), inv(d);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t k = 0; k < d; ++k) A[j][k] = t.mass[j][k];
        if (eps != 0.0) A[j][j] = g.add(A[j][j], g.constant(eps));
        std::vector<NodeId> coriolis(d);
        for (std::size_t k = 0; k < d; ++k) coriolis[k] = g.mul(t.mixed[j][k], t.qd[k]);
        b[j] = g.sub(t.dLdq[j], g.sum(coriolis));
    }
    // Symmetric Gaussian elimination without pivoting; the kinetic-energy
    // Hessian of the modular model is positive semidefinite and eps keeps
    // the pivots away from zero.
    for (std::size_t k = 0; k < d; ++k) {
        inv[k] = g.recip(A[k][k]);
        for (std::size_t r = k + 1; r < d; ++r) {
            const NodeId f = g.mul(A[r][k], inv[k]);
            b[r] = g.sub(b[r], g.mul(f, b[k]));
            for (std::size_t c = k + 1; c < d; ++c)
                A[r][c] = g.sub(A[r][c], g.mul(f, A[k][c]));
        }
    }
    std::vector<NodeId> x(d);
    for (std::size_t jj = d; jj-- > 0;) {
        NodeId v = b[jj];
        for (std::size_t c = jj + 1; c < d; ++c) v = g.sub(v, g.mul(A[jj][c], x[c]));
        x[jj] = g.mul(v, inv[jj]);
    }
    return x;
}

Schedule derivative_schedule(const Graph& g, const EulerLagrangeTerms& t) {
    std::vector<NodeId> outs;
    outs.insert(outs.end(), t.dLdq.begin(), t.dLdq.end());
    for (const auto& row : t.mass) outs.insert(outs.end(), row.begin(), row.end());
    for (const auto& row : t.mixed) outs.insert(outs.end(), row.begin(), row.end());
    outs.insert(outs.end(), t.qd.begin(), t.qd.end());
    return g.make_schedule(outs);
}

bool solve_acceleration(Graph& g, const EulerLagrangeTerms& t, const Schedule& deriv_sched,
                        const EulerLagrangeConfig& cfg, std::span<double> qdd_out) {
    const std::size_t d = t.q.size();
    g.eval_schedule(deriv_sched);
    linalg::Mat A(d);
    linalg::Vec b(d, 0.0);
    bool finite = true;
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t k = 0; k < d; ++k) A(j, k) = g.value(t.mass[j][k]);
        A(j, j) += cfg.hessian_eps;
        double c = 0.0;
        for (std::size_t k = 0; k < d; ++k) c += g.value(t.mixed[j][k]) * g.value(t.qd[k]);
        b[j] = g.value(t.dLdq[j]) - c;
        finite = finite && std::isfinite(b[j]);
        for (std::size_t k = 0; k < d; ++k) finite = finite && std::isfinite(A(j, k));
    }
    if (!finite) return false;
    return linalg::sym_solve(A, b, qdd_out);
}

CompiledLagrangian::CompiledLagrangian(std::size_t q_dim, const LagrangianBuilder& build_L,
                                       EulerLagrangeConfig cfg)
    : cfg_(cfg) {
    std::vector<NodeId> q(q_dim), qd(q_dim);
    for (auto& id : q) id = g_.input();
    for (auto& id : qd) id = g_.input();
    const NodeId L = build_L(g_, q, qd);
    terms_ = euler_lagrange_terms(g_, L, q, qd);
    deriv_sched_ = derivative_schedule(g_, terms_);
}

bool CompiledLagrangian::accel(std::span<const double> q, std::span<const double> qd,
                               std::span<double> out) {
    for (std::size_t i = 0; i < terms_.q.size(); ++i) {
        g_.set_input(terms_.q[i], q[i]);
        g_.set_input(terms_.qd[i], qd[i]);
    }
    return solve_acceleration(g_, terms_, deriv_sched_, cfg_, out);
}

double CompiledLagrangian::lagrangian_value(std::span<const double> q,
                                            std::span<const double> qd) {
    for (std::size_t i = 0; i < terms_.q.size(); ++i) {
        g_.set_input(terms_.q[i], q[i]);
        g_.set_input(terms_.qd[i], qd[i]);
    }
    return g_.evaluate(terms_.lagrangian);
}

linalg::Vec euler_lagrange_accel(const LagrangianBuilder& build_L, std::span<const double> q,
                                 std::span<const double> qd, const EulerLagrangeConfig& cfg) {
    CompiledLagrangian cl(q.size(), build_L, cfg);
    // Checked pass first so domain errors surface as EvalError.
    for (std::size_t i = 0; i < q.size(); ++i) {
        cl.graph().set_input(cl.terms().q[i], q[i]);
        cl.graph().set_input(cl.terms().qd[i], qd[i]);
    }
    for (std::size_t j = 0; j < q.size(); ++j) {
        cl.graph().evaluate(cl.terms().dLdq[j]);
        for (std::size_t k = 0; k < q.size(); ++k) {
            cl.graph().evaluate(cl.terms().mass[j][k]);
            cl.graph().evaluate(cl.terms().mixed[j][k]);
        }
    }
    linalg::Vec out(q.size(), 0.0);
    if (!cl.accel(q, qd, out))
        throw std::runtime_error("euler_lagrange_accel: singular regularized mass matrix");
    return out;
}

bool scale_invariance_check(const LagrangianBuilder& build_L, double alpha,
                            std::span<const double> q, std::span<const double> qd) {
    if (!(alpha > 0.0)) throw std::invalid_argument("scale_invariance_check: alpha must be > 0");
    Graph g;
    std::vector<NodeId> qn(q.size()), qdn(qd.size());
    for (auto& id : qn) id = g.input();
    for (auto& id : qdn) id = g.input();
    const NodeId L = build_L(g, qn, qdn);
    const NodeId La = g.mul(g.constant(alpha), L);
    const EulerLagrangeTerms t1 = euler_lagrange_terms(g, L, qn, qdn);
    const EulerLagrangeTerms t2 = euler_lagrange_terms(g, La, qn, qdn);
    const Schedule s1 = derivative_schedule(g, t1);
    const Schedule s2 = derivative_schedule(g, t2);
    for (std::size_t i = 0; i < q.size(); ++i) {
        g.set_input(qn[i], q[i]);
        g.set_input(qdn[i], qd[i]);
    }
    const EulerLagrangeConfig cfg{0.0};
    linalg::Vec a1(q.size(), 0.0), a2(q.size(), 0.0);
    if (!solve_acceleration(g, t1, s1, cfg, a1)) return false;
    if (!solve_acceleration(g, t2, s2, cfg, a2)) return false;
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        diff = std::max(diff, std::abs(a1[i] - a2[i]));
        norm = std::max(norm, std::max(std::abs(a1[i]), std::abs(a2[i])));
    }
    return diff <= 1e-10 * norm + 1e-14;
}

}  // namespace modlanet::autodiff
