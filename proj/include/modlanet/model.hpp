#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modlanet/autodiff.hpp"
#include "modlanet/integrators.hpp"
#include "modlanet/nets.hpp"
#include "modlanet/systems.hpp"

namespace modlanet::model {

/// Parent-linked element graph fixing the order origins propagate in
/// (chains hang each element off the previous one; free bodies are all
/// roots).
struct ComputationTree {
    int n = 0;
    std::vector<int> parent;  // -1 = root
    std::vector<int> order;   // traversal, parents before children

    void validate() const;
};

ComputationTree build_tree(const systems::SystemSpec& spec);

enum class TransformKind : std::uint8_t { Identity, Mlp, AnalyticChain };
enum class PotentialKind : std::uint8_t { None, Mlp, AnalyticGravityHeight, AnalyticInverseDistance };

/// The reusable bundle shared by every element of one type: coordinate
/// transform nets (position map and its velocity Jacobian), potential nets
/// for the environment and pairwise terms, and one learnable log-mass.
/// Analytic variants substitute the closed-form pieces through the same
/// assembly pipeline, which is how the model machinery is cross-checked
/// against the ground-truth dynamics.
struct ElementType {
    TransformKind transform = TransformKind::Mlp;
    bool differentiate_tq = false;  // derive the velocity map from T_q instead of its own net
    nets::MlpSpec tq;               // q_e -> x
    nets::MlpSpec tqd;              // q_e -> x * q_e Jacobian entries
    PotentialKind env_potential = PotentialKind::Mlp;
    PotentialKind pair_potential = PotentialKind::Mlp;
    nets::MlpSpec u_env;   // x -> 1
    nets::MlpSpec u_pair;  // 2x -> 1
    double analytic_length = 1.0;  // AnalyticChain rod length
    double analytic_g = 9.8;       // AnalyticGravityHeight field strength
    double analytic_G = 1.0;       // AnalyticInverseDistance coupling
};

enum class ModelKind : std::uint8_t { Modular, Monolithic, DirectMlp };

const char* model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& name);

struct ModelConfig {
    ModelKind kind = ModelKind::Modular;
    systems::SystemSpec system;  // the physical system family this model targets
    ElementType type;            // modular only
    double el_epsilon = 1e-9;    // modular + monolithic
    nets::MlpSpec direct_mlp;     // DirectMlp: (q, q̇) -> q̈
    nets::MlpSpec monolithic_mlp; // Monolithic: (q, q̇) -> scalar L

    int q_dim() const { return system.q_dim(); }
    int q_dim_per_element() const;
    int x_dim() const { return 2; }
    void validate() const;
};

/// Defaults sized to land near the reported parameter budgets.
ModelConfig default_modular_config(const systems::SystemSpec& spec);
ModelConfig default_baseline_config(const systems::SystemSpec& spec);
ModelConfig default_monolithic_config(const systems::SystemSpec& spec);
/// Modular pipeline with the closed-form transform/potential pieces plugged
/// in; reproduces the analytic dynamics exactly and exists for verification.
ModelConfig analytic_plugin_config(const systems::SystemSpec& spec);

/// Exact trainable-scalar count for a config (nets + log-mass + coupling
/// weights). Matches ParameterStore enumeration.
std::int64_t count_params(const ModelConfig& cfg);

/// Canonical parameter layout for a config; names and order are what
/// checkpoints and graph param slots rely on.
std::vector<std::string> expected_param_names(const ModelConfig& cfg);
nets::ParameterStore init_params(const ModelConfig& cfg, std::uint64_t seed);

/// A config compiled into a reusable graph. Param slots follow the store
/// flattening order; inputs are (q, q̇).
struct Program {
    autodiff::Graph g;
    std::vector<autodiff::NodeId> q_in, qd_in;
    std::vector<autodiff::NodeId> param_nodes;  // store order
    bool has_el = false;
    autodiff::EulerLagrangeTerms terms;       // when has_el
    autodiff::Schedule deriv_sched;           // when has_el
    std::vector<autodiff::NodeId> qdd_nodes;  // in-graph acceleration
    autodiff::Schedule qdd_sched;
    // modular-only probes, kept for verification
    std::vector<std::vector<autodiff::NodeId>> x_nodes, xd_nodes;
    autodiff::NodeId lagrangian = -1;
    autodiff::NodeId kinetic = -1;
    autodiff::NodeId potential = -1;
};

Program build_program(const ModelConfig& cfg, const ComputationTree& tree);

/// A dynamics model: config + shared named parameters + compiled program.
/// Copyable; copies share the parameter store (modularity is parameter
/// sharing) but own their graph, so copies may run on other threads.
class DynamicsModel {
public:
    DynamicsModel(ModelConfig cfg, std::shared_ptr<nets::ParameterStore> params);
    static DynamicsModel initialize(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const ComputationTree& tree() const { return tree_; }
    nets::ParameterStore& params() { return *params_; }
    const nets::ParameterStore& params() const { return *params_; }
    std::shared_ptr<nets::ParameterStore> shared_params() const { return params_; }

    int q_dim() const { return cfg_.q_dim(); }
    std::int64_t param_count() const;

    /// q̈ at (q, q̇); false when the (regularized) mass matrix is degenerate
    /// or the forward pass is non-finite.
    bool forward(std::span<const double> q, std::span<const double> qd, std::span<double> out);

    /// z = [q, q̇] -> dz = [q̇, q̈] for the integrators.
    integrators::OdeFn ode();

    /// Re-read the shared store into the graph bindings (after training or
    /// external mutation of the parameters).
    void refresh_params();

    Program& program() { return prog_; }

private:
    ModelConfig cfg_;
    ComputationTree tree_;
    std::shared_ptr<nets::ParameterStore> params_;
    Program prog_;
};

/// Rebuilds the model for a system with a different element count. The
/// parameter store is shared by reference, so fine-tuning the extension
/// trains the original tensors too.
DynamicsModel extend_model(const DynamicsModel& base, const systems::SystemSpec& new_spec);

/// Scaling the assembled Lagrangian by alpha > 0 must leave the recovered
/// acceleration unchanged (checked with zero regularization, rtol 1e-10).
/// Appends probe nodes to the model's graph.
bool check_scale_invariance(DynamicsModel& model, double alpha, std::span<const double> q,
                            std::span<const double> qd);

/// Checkpoint file: JSON with kind, config, named parameter tensors at full
/// precision, seed and training metadata. Round-trips bit-exactly.
void save_checkpoint(const DynamicsModel& model, const std::string& path, std::uint64_t seed,
                     const std::string& train_meta_json, const std::string& config_echo = "");

struct Checkpoint {
    DynamicsModel model;
    std::uint64_t seed = 0;
    std::string train_meta_json;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace modlanet::model
