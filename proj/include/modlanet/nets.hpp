#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "modlanet/autodiff.hpp"
#include "modlanet/rng.hpp"

namespace modlanet::nets {

enum class Activation : std::uint8_t { Softplus, Tanh };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/// Shape of a multilayer perceptron. Two hidden layers by default, i.e. the
/// "3-layer MLP" counting convention (two hidden affine maps plus the output
/// map). Activations must stay twice differentiable for the dynamics
/// derivation to work, which softplus and tanh are.
struct MlpSpec {
    int in_dim = 1;
    std::vector<int> hidden = {40, 40};
    int out_dim = 1;
    Activation activation = Activation::Softplus;

    void validate() const;
    /// Exact trainable-scalar count: sum over layers of (in+1)*out.
    std::int64_t param_count() const;
};

/// Named flat parameter tensors with deterministic (insertion) order.
class ParameterStore {
public:
    void add(const std::string& name, std::vector<double> values);
    bool has(const std::string& name) const;
    std::vector<double>& at(const std::string& name);
    const std::vector<double>& at(const std::string& name) const;

    const std::vector<std::string>& names() const { return order_; }
    std::int64_t total_count() const;

    /// Concatenation of all tensors in insertion order.
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> flat);

private:
    std::vector<std::string> order_;
    std::vector<std::vector<double>> tensors_;
    std::size_t index_of(const std::string& name) const;
};

/// Xavier-uniform weights, zero biases; deterministic per seed. Tensors are
/// named "<prefix>.w<layer>" (row-major [out][in]) and "<prefix>.b<layer>".
void init_mlp(ParameterStore& store, const std::string& prefix, const MlpSpec& spec,
              std::uint64_t seed);

/// Node ids of one MLP's parameters inside a graph, in the same order the
/// store holds them.
struct MlpNodes {
    std::vector<std::vector<autodiff::NodeId>> weights;  // per layer, row-major
    std::vector<std::vector<autodiff::NodeId>> biases;
};

/// Creates param nodes for `spec` in store-flattening order. The caller is
/// responsible for creating param nodes for *all* tensors in store order so
/// that graph param slots line up with ParameterStore::flatten().
MlpNodes mlp_param_nodes(autodiff::Graph& g, const MlpSpec& spec);

/// Emits the forward pass: affine + activation per hidden layer, affine
/// output with no final activation.
std::vector<autodiff::NodeId> mlp_forward(autodiff::Graph& g, const MlpSpec& spec,
                                          const MlpNodes& params,
                                          std::span<const autodiff::NodeId> inputs);

}  // namespace modlanet::nets
