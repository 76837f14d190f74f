#include "modlanet/nets.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace modlanet::nets {

using autodiff::Graph;
using autodiff::NodeId;

const char* activation_name(Activation a) {
    return a == Activation::Softplus ? "softplus" : "tanh";
}

Activation activation_from_name(const std::string& name) {
    if (name == "softplus") return Activation::Softplus;
    if (name == "tanh") return Activation::Tanh;
    throw std::invalid_argument("unknown activation: " + name);
}

void MlpSpec::validate() const {
    if (in_dim < 1 || out_dim < 1) throw std::invalid_argument("MlpSpec: dims must be >= 1");
    for (int h : hidden)
        if (h < 1) throw std::invalid_argument("MlpSpec: hidden widths must be >= 1");
}

std::int64_t MlpSpec::param_count() const {
    std::int64_t total = 0;
    int prev = in_dim;
    for (int h : hidden) {
        total += static_cast<std::int64_t>(prev + 1) * h;
        prev = h;
    }
    total += static_cast<std::int64_t>(prev + 1) * out_dim;
    return total;
}

void ParameterStore::add(const std::string& name, std::vector<double> values) {
    if (has(name)) throw std::invalid_argument("ParameterStore: duplicate name " + name);
    order_.push_back(name);
    tensors_.push_back(std::move(values));
}

bool ParameterStore::has(const std::string& name) const {
    for (const auto& n : order_)
        if (n == name) return true;
    return false;
}

std::size_t ParameterStore::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < order_.size(); ++i)
        if (order_[i] == name) return i;
    throw std::out_of_range("ParameterStore: no tensor named " + name);
}

std::vector<double>& ParameterStore::at(const std::string& name) {
    return tensors_[index_of(name)];
}

const std::vector<double>& ParameterStore::at(const std::string& name) const {
    return tensors_[index_of(name)];
}

std::int64_t ParameterStore::total_count() const {
    std::int64_t total = 0;
    for (const auto& t : tensors_) total += static_cast<std::int64_t>(t.size());
    return total;
}

std::vector<double> ParameterStore::flatten() const {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(total_count()));
    for (const auto& t : tensors_) flat.insert(flat.end(), t.begin(), t.end());
    return flat;
}

void ParameterStore::unflatten(std::span<const double> flat) {
    if (flat.size() != static_cast<std::size_t>(total_count()))
        throw std::invalid_argument("ParameterStore: unflatten size mismatch");
    std::size_t pos = 0;
    for (auto& t : tensors_) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                  flat.begin() + static_cast<std::ptrdiff_t>(pos + t.size()), t.begin());
        pos += t.size();
    }
}

void init_mlp(ParameterStore& store, const std::string& prefix, const MlpSpec& spec,
              std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    int prev = spec.in_dim;
    std::vector<int> outs(spec.hidden);
    outs.push_back(spec.out_dim);
    for (std::size_t layer = 0; layer < outs.size(); ++layer) {
        const int fan_in = prev;
        const int fan_out = outs[layer];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::vector<double> w(static_cast<std::size_t>(fan_in) * fan_out);
        for (auto& v : w) v = rng.uniform(-bound, bound);
        store.add(prefix + ".w" + std::to_string(layer), std::move(w));
        store.add(prefix + ".b" + std::to_string(layer),
                  std::vector<double>(static_cast<std::size_t>(fan_out), 0.0));
        prev = fan_out;
    }
}

MlpNodes mlp_param_nodes(Graph& g, const MlpSpec& spec) {
    MlpNodes nodes;
    int prev = spec.in_dim;
    std::vector<int> outs(spec.hidden);
    outs.push_back(spec.out_dim);
    for (int fan_out : outs) {
        std::vector<NodeId> w(static_cast<std::size_t>(prev) * fan_out);
        for (auto& id : w) id = g.param();
        std::vector<NodeId> b(static_cast<std::size_t>(fan_out));
        for (auto& id : b) id = g.param();
        nodes.weights.push_back(std::move(w));
        nodes.biases.push_back(std::move(b));
        prev = fan_out;
    }
    return nodes;
}

std::vector<NodeId> mlp_forward(Graph& g, const MlpSpec& spec, const MlpNodes& params,
                                std::span<const NodeId> inputs) {
    if (static_cast<int>(inputs.size()) != spec.in_dim)
        throw std::invalid_argument("mlp_forward: input dimension mismatch");
    std::vector<NodeId> x(inputs.begin(), inputs.end());
    const std::size_t n_layers = params.weights.size();
    for (std::size_t layer = 0; layer < n_layers; ++layer) {
        const auto& w = params.weights[layer];
        const auto& b = params.biases[layer];
        const std::size_t fan_in = x.size();
        const std::size_t fan_out = b.size();
        std::vector<NodeId> y(fan_out);
        std::vector<NodeId> terms(fan_in + 1);
        for (std::size_t o = 0; o < fan_out; ++o) {
            for (std::size_t i = 0; i < fan_in; ++i)
                terms[i] = g.mul(w[o * fan_in + i], x[i]);
            terms[fan_in] = b[o];
            const NodeId affine = g.sum(terms);
            const bool is_output = (layer + 1 == n_layers);
            y[o] = is_output             ? affine
                   : spec.activation == Activation::Softplus ? g.softplus(affine)
                                                             : g.tanh(affine);
        }
        x = std::move(y);
    }
    return x;
}

}  // namespace modlanet::nets
