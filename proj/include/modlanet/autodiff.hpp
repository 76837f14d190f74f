#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "modlanet/linalg.hpp"

namespace modlanet::autodiff {

using NodeId = std::int32_t;
using Schedule = std::vector<NodeId>;

enum class Op : std::uint8_t {
    Const,
    Input,
    Param,
    Add,
    Mul,
    Neg,
    Recip,
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Softplus,
    PowInt,
    Sum,
};

const char* op_name(Op op);

/// Raised when a forward pass produces a non-finite intermediate
/// (log of a non-positive value, division by zero, ...).
struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One node of the computation graph. `a`/`b` are operand node ids except
/// for: Const (a = index into the constant pool), Input/Param (a = binding
/// slot), PowInt (b = integer exponent), Sum (a = offset into the argument
/// pool, b = argument count).
struct Node {
    Op op;
    NodeId a = -1;
    NodeId b = -1;
};

/// Append-only scalar computation graph. Node ids are topological by
/// construction: operands always have lower ids, so a single ascending sweep
/// evaluates any subset and a descending sweep backpropagates.
///
/// Differentiation emits new nodes into the same graph, which is what makes
/// second- and third-order derivatives (and training through them) possible
/// with one mechanism.
class Graph {
public:
    // --- construction -------------------------------------------------------
    NodeId constant(double value);
    NodeId input();
    NodeId param();

    /// Generic builder for the computational op kinds. Validates arity.
    /// Const/Input/Param have dedicated factories and are rejected here.
    NodeId build(Op op, std::span<const NodeId> inputs, int aux = 0);

    NodeId add(NodeId a, NodeId b) { return emit({Op::Add, a, b}); }
    NodeId mul(NodeId a, NodeId b) { return emit({Op::Mul, a, b}); }
    NodeId neg(NodeId a) { return emit({Op::Neg, a, -1}); }
    NodeId recip(NodeId a) { return emit({Op::Recip, a, -1}); }
    NodeId sin(NodeId a) { return emit({Op::Sin, a, -1}); }
    NodeId cos(NodeId a) { return emit({Op::Cos, a, -1}); }
    NodeId exp(NodeId a) { return emit({Op::Exp, a, -1}); }
    NodeId log(NodeId a) { return emit({Op::Log, a, -1}); }
    NodeId tanh(NodeId a) { return emit({Op::Tanh, a, -1}); }
    NodeId softplus(NodeId a) { return emit({Op::Softplus, a, -1}); }
    NodeId pow_int(NodeId a, int k);
    NodeId sum(std::span<const NodeId> args);

    NodeId sub(NodeId a, NodeId b) { return add(a, neg(b)); }
    /// sqrt(x) for x > 0, expressed with the available op kinds.
    NodeId sqrt_pos(NodeId a) { return exp(mul(constant(0.5), log(a))); }

    // --- bindings -----------------------------------------------------------
    void set_input(NodeId id, double v);
    void set_param(NodeId id, double v);
    std::size_t input_count() const { return input_vals_.size(); }
    std::size_t param_count() const { return param_vals_.size(); }
    /// Bind all param slots at once (order of param() creation).
    void set_params(std::span<const double> flat);
    double param_value(std::size_t slot) const { return param_vals_[slot]; }

    // --- evaluation ---------------------------------------------------------
    /// Checked forward pass: evaluates the ancestors of `output` in
    /// topological order, verifying bindings and finiteness. Throws EvalError.
    double evaluate(NodeId output);

    /// Sorted list of nodes `outputs` depend on; feed to eval_schedule.
    Schedule make_schedule(std::span<const NodeId> outputs) const;

    /// Unchecked forward pass over a precomputed schedule (hot path).
    void eval_schedule(const Schedule& sched);

    double value(NodeId id) const { return values_[static_cast<std::size_t>(id)]; }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }

    // --- differentiation ----------------------------------------------------
    /// Emit nodes computing d(output)/d(wrt_k). The returned nodes live in
    /// this graph and may be differentiated again.
    std::vector<NodeId> grad(NodeId output, std::span<const NodeId> wrt);

    /// H[j][k] = d²(output)/d(wrt_j)d(wrt_k). Upper triangle is built and
    /// mirrored, so H[j][k] and H[k][j] are the same node.
    std::vector<std::vector<NodeId>> hessian(NodeId output, std::span<const NodeId> wrt);

private:
    NodeId emit(Node n);
    void check_id(NodeId id) const;

    std::vector<Node> nodes_;
    std::vector<double> values_;
    std::vector<double> consts_;
    std::vector<NodeId> sum_args_;
    std::vector<double> input_vals_;
    std::vector<double> param_vals_;
    std::vector<char> input_bound_;
    std::vector<char> param_bound_;
    std::unordered_map<std::uint64_t, NodeId> const_cache_;
};

// --- Euler-Lagrange machinery -----------------------------------------------

struct EulerLagrangeConfig {
    /// Added to the velocity-Hessian diagonal before solving; keeps the solve
    /// well posed when a learned kinetic term degenerates.
    double hessian_eps = 1e-9;
};

/// Node ids of every derivative Eq.-style acceleration recovery needs:
/// dL/dq, dL/dq̇, the velocity Hessian (mass matrix) and the mixed matrix
/// M[j][k] = d²L/dq̇_j dq_k.
struct EulerLagrangeTerms {
    std::vector<NodeId> q, qd;
    NodeId lagrangian = -1;
    std::vector<NodeId> dLdq;
    std::vector<NodeId> dLdqd;
    std::vector<std::vector<NodeId>> mass;
    std::vector<std::vector<NodeId>> mixed;
};

EulerLagrangeTerms euler_lagrange_terms(Graph& g, NodeId lagrangian,
                                        std::span<const NodeId> q,
                                        std::span<const NodeId> qd);

/// In-graph acceleration: emits (mass + eps I)^-1 (dL/dq - mixed q̇) as graph
/// nodes via symmetric elimination, so the result stays differentiable
/// (training backpropagates through it).
std::vector<NodeId> acceleration_nodes(Graph& g, const EulerLagrangeTerms& t, double eps);

/// Numeric acceleration at already-bound inputs: evaluates the derivative
/// nodes over `deriv_sched` and solves with LDL^T (full-pivot fallback).
/// Returns false on a singular regularized mass matrix or non-finite
/// derivatives.
bool solve_acceleration(Graph& g, const EulerLagrangeTerms& t, const Schedule& deriv_sched,
                        const EulerLagrangeConfig& cfg, std::span<double> qdd_out);

Schedule derivative_schedule(const Graph& g, const EulerLagrangeTerms& t);

using LagrangianBuilder =
    std::function<NodeId(Graph&, std::span<const NodeId> q, std::span<const NodeId> qd)>;

/// A Lagrangian compiled once and queried many times. Callers own one per
/// model or per analytic system and reuse it across integrator steps.
class CompiledLagrangian {
public:
    CompiledLagrangian(std::size_t q_dim, const LagrangianBuilder& build_L,
                       EulerLagrangeConfig cfg = {});

    /// q̈ at (q, q̇); false when the mass matrix is degenerate or a
    /// derivative is non-finite.
    bool accel(std::span<const double> q, std::span<const double> qd, std::span<double> out);

    /// Lagrangian value at (q, q̇) (checked evaluation).
    double lagrangian_value(std::span<const double> q, std::span<const double> qd);

    std::size_t q_dim() const { return terms_.q.size(); }
    Graph& graph() { return g_; }
    const EulerLagrangeTerms& terms() const { return terms_; }

private:
    Graph g_;
    EulerLagrangeTerms terms_;
    Schedule deriv_sched_;
    EulerLagrangeConfig cfg_;
};

/// One-shot spec operation: build, bind, solve.
/// Throws EvalError on non-finite derivatives, std::runtime_error on a
/// singular regularized mass matrix.
linalg::Vec euler_lagrange_accel(const LagrangianBuilder& build_L, std::span<const double> q,
                                 std::span<const double> qd, const EulerLagrangeConfig& cfg = {});

/// Checks that scaling the Lagrangian by alpha > 0 leaves the recovered
/// acceleration unchanged (eps = 0), to rtol 1e-10.
bool scale_invariance_check(const LagrangianBuilder& build_L, double alpha,
                            std::span<const double> q, std::span<const double> qd);

}  // namespace modlanet::autodiff
