#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "forecaster/autodiff.hpp"
#include "forecaster/gmrf.hpp"

// Graph-sparsified linear layers. Each neuron belongs to one location or to
// the auxiliary block; a weight between two location neurons survives only
// if the locations coincide or are adjacent in the dependency graph, and
// location/auxiliary cross connections are always pruned.
namespace forecaster::graph_nn {

inline constexpr int kAuxGroup = -1;

struct NeuronAllocation {
    std::size_t n_locations = 0;
    std::size_t per_location_in = 0;
    std::size_t per_location_out = 0;
    std::size_t aux_in = 0;
    std::size_t aux_out = 0;

    std::size_t total_in() const { return n_locations * per_location_in + aux_in; }
    std::size_t total_out() const { return n_locations * per_location_out + aux_out; }
};

// Group label per neuron: location blocks 0..N-1 contiguous, auxiliary last.
std::vector<int> block_layout(std::size_t n_locations, std::size_t per_location, std::size_t aux);

ad::Tensor build_mask(const NeuronAllocation& allocation, const gmrf::DependencyGraph& graph);
// Mask for arbitrary neuron labelings (used where heads are concatenated).
ad::Tensor build_mask(std::span<const int> out_groups, std::span<const int> in_groups,
                      const gmrf::DependencyGraph& graph);

std::size_t count_nonzeros(const ad::Tensor& mask);

struct SparseLinearSpec {
    NeuronAllocation allocation;
    std::vector<int> out_groups;
    std::vector<int> in_groups;
    ad::Tensor mask;  // total_out x total_in, entries in {0, 1}
    bool bias_enabled = true;

    std::size_t in_features() const { return in_groups.size(); }
    std::size_t out_features() const { return out_groups.size(); }

    static SparseLinearSpec make(const NeuronAllocation& allocation, const gmrf::DependencyGraph& graph,
                                 bool bias_enabled = true);
    static SparseLinearSpec from_layouts(std::vector<int> out_groups, std::vector<int> in_groups,
                                         const gmrf::DependencyGraph& graph, bool bias_enabled);
};

struct LayerWeights {
    ad::Tensor weight;  // out x in
    ad::Tensor bias;    // 1 x out; empty shape when bias is disabled
};

// (weight ⊙ mask) · input + bias for a single input vector.
std::vector<double> sparse_linear_forward(const SparseLinearSpec& spec, const ad::Tensor& weight,
                                          const ad::Tensor& bias, std::span<const double> input);
std::vector<double> sparse_embedding(const SparseLinearSpec& spec, const ad::Tensor& weight,
                                     const ad::Tensor& bias, std::span<const double> input);

// Glorot-uniform over unmasked entries, limits from effective fans; masked
// entries and the bias are exactly zero.
LayerWeights init_weights(const SparseLinearSpec& spec, std::uint64_t seed);

// Throws Integrity if any masked entry of `weight` is nonzero.
void check_mask_integrity(const SparseLinearSpec& spec, const ad::Tensor& weight, std::string_view name);

// Row-wise application on a tape: rows of `input` are samples.
ad::Var sparse_linear(ad::Tape& tape, const SparseLinearSpec& spec, ad::Var input, ad::Var weight,
                      std::optional<ad::Var> bias);

}  // namespace forecaster::graph_nn
