#include "forecaster/graph_nn.hpp"

#include <cmath>
#include <string>

#include "forecaster/error.hpp"
#include "forecaster/random.hpp"

namespace forecaster::graph_nn {

std::vector<int> block_layout(std::size_t n_locations, std::size_t per_location, std::size_t aux) {
    std::vector<int> groups;
    groups.reserve(n_locations * per_location + aux);
    for (std::size_t loc = 0; loc < n_locations; ++loc) {
        groups.insert(groups.end(), per_location, static_cast<int>(loc));
    }
    groups.insert(groups.end(), aux, kAuxGroup);
    return groups;
}

ad::Tensor build_mask(std::span<const int> out_groups, std::span<const int> in_groups,
                      const gmrf::DependencyGraph& graph) {
    const auto n = graph.n_locations;
    std::vector<std::vector<char>> adjacent(n, std::vector<char>(n, 0));
    for (std::size_t i = 0; i < n; ++i) adjacent[i][i] = 1;
    for (const auto& e : graph.edges) {
        if (e.i >= n || e.j >= n) fail(ErrorKind::Configuration, "graph edge index exceeds node count");
        adjacent[e.i][e.j] = 1;
        adjacent[e.j][e.i] = 1;
    }
    auto check = [n](int g) {
        if (g != kAuxGroup && (g < 0 || static_cast<std::size_t>(g) >= n)) {
            fail(ErrorKind::Configuration, "neuron assigned to location " + std::to_string(g) + " but graph has " +
                                               std::to_string(n) + " nodes");
        }
    };
    for (int g : out_groups) check(g);
    for (int g : in_groups) check(g);

    ad::Tensor mask = ad::Tensor::zeros(out_groups.size(), in_groups.size());
    for (std::size_t o = 0; o < out_groups.size(); ++o) {
        for (std::size_t i = 0; i < in_groups.size(); ++i) {
            const int go = out_groups[o];
            const int gi = in_groups[i];
            bool keep = false;
            if (go == kAuxGroup || gi == kAuxGroup) {
                keep = go == kAuxGroup && gi == kAuxGroup;
            } else {
                keep = adjacent[static_cast<std::size_t>(go)][static_cast<std::size_t>(gi)] != 0;
            }
            mask(o, i) = keep ? 1.0 : 0.0;
        }
    }
    return mask;
}

ad::Tensor build_mask(const NeuronAllocation& allocation, const gmrf::DependencyGraph& graph) {
    if (graph.n_locations != allocation.n_locations) {
        fail(ErrorKind::Configuration, "allocation has " + std::to_string(allocation.n_locations) +
                                           " locations but graph has " + std::to_string(graph.n_locations));
    }
    const auto out = block_layout(allocation.n_locations, allocation.per_location_out, allocation.aux_out);
    const auto in = block_layout(allocation.n_locations, allocation.per_location_in, allocation.aux_in);
    return build_mask(out, in, graph);
}

std::size_t count_nonzeros(const ad::Tensor& mask) {
    std::size_t n = 0;
    for (double v : mask.values) n += v != 0.0 ? 1 : 0;
    return n;
}

SparseLinearSpec SparseLinearSpec::make(const NeuronAllocation& allocation, const gmrf::DependencyGraph& graph,
                                        bool bias_enabled) {
    SparseLinearSpec spec;
    spec.allocation = allocation;
    spec.out_groups = block_layout(allocation.n_locations, allocation.per_location_out, allocation.aux_out);
    spec.in_groups = block_layout(allocation.n_locations, allocation.per_location_in, allocation.aux_in);
    spec.mask = build_mask(allocation, graph);
    spec.bias_enabled = bias_enabled;
    return spec;
}

SparseLinearSpec SparseLinearSpec::from_layouts(std::vector<int> out_groups, std::vector<int> in_groups,
                                                const gmrf::DependencyGraph& graph, bool bias_enabled) {
    SparseLinearSpec spec;
    spec.mask = build_mask(out_groups, in_groups, graph);
    spec.allocation.n_locations = graph.n_locations;
    auto count = [](const std::vector<int>& groups, std::size_t& per_loc, std::size_t& aux, std::size_t n) {
        aux = 0;
        for (int g : groups) aux += g == kAuxGroup ? 1 : 0;
        per_loc = n ? (groups.size() - aux) / n : 0;
    };
    count(out_groups, spec.allocation.per_location_out, spec.allocation.aux_out, graph.n_locations);
    count(in_groups, spec.allocation.per_location_in, spec.allocation.aux_in, graph.n_locations);
    spec.out_groups = std::move(out_groups);
    spec.in_groups = std::move(in_groups);
    spec.bias_enabled = bias_enabled;
    return spec;
}

std::vector<double> sparse_linear_forward(const SparseLinearSpec& spec, const ad::Tensor& weight,
                                          const ad::Tensor& bias, std::span<const double> input) {
    const std::size_t out = spec.out_features();
    const std::size_t in = spec.in_features();
    if (weight.rows() != out || weight.cols() != in) {
        fail(ErrorKind::Dimension, "weight shape " + ad::shape_string(weight.shape) + " does not match mask " +
                                       ad::shape_string(spec.mask.shape));
    }
    if (input.size() != in) {
        fail(ErrorKind::Dimension, "input length " + std::to_string(input.size()) + " does not match layer input " +
                                       std::to_string(in));
    }
    const bool use_bias = spec.bias_enabled && bias.size() == out;
    std::vector<double> y(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < in; ++i) acc += weight(o, i) * spec.mask(o, i) * input[i];
        y[o] = acc + (use_bias ? bias.values[o] : 0.0);
    }
    return y;
}

std::vector<double> sparse_embedding(const SparseLinearSpec& spec, const ad::Tensor& weight,
                                     const ad::Tensor& bias, std::span<const double> input) {
    auto y = sparse_linear_forward(spec, weight, bias, input);
    for (double& v : y) v = v > 0.0 ? v : 0.0;
    return y;
}

LayerWeights init_weights(const SparseLinearSpec& spec, std::uint64_t seed) {
    const std::size_t out = spec.out_features();
    const std::size_t in = spec.in_features();
    std::vector<std::size_t> fan_in(out, 0), fan_out(in, 0);
    for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t i = 0; i < in; ++i) {
            if (spec.mask(o, i) != 0.0) {
                ++fan_in[o];
                ++fan_out[i];
            }
        }
    }
    Rng rng(seed);
    LayerWeights w;
    w.weight = ad::Tensor::zeros(out, in, true);
    for (std::size_t o = 0; o < out; ++o) {
        const double fi = static_cast<double>(fan_in[o] ? fan_in[o] : 1);
        for (std::size_t i = 0; i < in; ++i) {
            if (spec.mask(o, i) == 0.0) continue;
            const double fo = static_cast<double>(fan_out[i] ? fan_out[i] : 1);
            const double limit = std::sqrt(6.0 / (fi + fo));
            w.weight(o, i) = rng.uniform(-limit, limit);
        }
    }
    if (spec.bias_enabled) {
        w.bias = ad::Tensor::zeros(1, out, true);
    }
    return w;
}

void check_mask_integrity(const SparseLinearSpec& spec, const ad::Tensor& weight, std::string_view name) {
    if (weight.rows() != spec.out_features() || weight.cols() != spec.in_features()) {
        fail(ErrorKind::Integrity, "parameter '" + std::string(name) + "' has shape " +
                                       ad::shape_string(weight.shape) + ", mask is " +
                                       ad::shape_string(spec.mask.shape));
    }
    for (std::size_t k = 0; k < weight.values.size(); ++k) {
        if (spec.mask.values[k] == 0.0 && weight.values[k] != 0.0) {
            fail(ErrorKind::Integrity, "parameter '" + std::string(name) + "' has nonzero weight at masked entry (" +
                                           std::to_string(k / spec.in_features()) + ", " +
                                           std::to_string(k % spec.in_features()) + ")");
        }
    }
}

ad::Var sparse_linear(ad::Tape& tape, const SparseLinearSpec& spec, ad::Var input, ad::Var weight,
                      std::optional<ad::Var> bias) {
    ad::Var y = tape.linear(input, weight, &spec.mask);
    if (bias && spec.bias_enabled) y = tape.add_row_vector(y, *bias);
    return y;
}

}  // namespace forecaster::graph_nn
