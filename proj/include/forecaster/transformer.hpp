#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "forecaster/autodiff.hpp"
#include "forecaster/gmrf.hpp"
#include "forecaster/graph_nn.hpp"

// Graph-sparsified encoder-decoder Transformer. Every linear map inside the
// model is a sparse linear layer built from the dependency graph; state
// vectors are laid out as N location blocks followed by one auxiliary block.
namespace forecaster::transformer {

struct ModelConfig {
    std::size_t n_locations = 0;
    std::size_t n_aux_features = 0;  // P
    std::size_t per_location = 4;    // state neurons per location
    std::size_t aux_neurons = 64;    // state neurons for the auxiliary block
    std::size_t heads = 1;
    std::size_t layers = 1;  // encoder layers = decoder layers
    bool query_scaling = true;
    double layer_norm_eps = 1e-5;
    double dropout = 0.0;  // reserved; only 0 is accepted

    std::size_t d_signal() const { return n_locations * per_location; }
    std::size_t d_aux() const { return aux_neurons; }
    std::size_t d_model() const { return d_signal() + d_aux(); }
    std::size_t input_width() const { return n_locations + n_aux_features; }

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& doc);
};

// r = [sqrt(1/2 + d_aux/(2 d_signal)) * 1_{d_signal}, sqrt(1/2 + d_signal/(2 d_aux)) * 1_{d_aux}]
std::vector<double> query_scaling_vector(std::size_t d_signal, std::size_t d_aux);

struct AttentionConfig {
    std::size_t heads = 1;
    std::size_t d_model = 0;
    std::size_t d_signal = 0;
    std::size_t d_aux = 0;
    bool apply_scaling = true;
    std::vector<double> r;

    std::size_t head_dim() const { return d_model / heads; }
    static AttentionConfig make(const ModelConfig& config);
};

struct Linear {
    graph_nn::SparseLinearSpec spec;
    ad::Tensor weight;
    ad::Tensor bias;  // empty when spec.bias_enabled is false
};

struct Attention {
    std::vector<Linear> query;  // one per head, no bias
    std::vector<Linear> key;
    std::vector<Linear> value;
    Linear output;
};

struct LayerNorm {
    ad::Tensor gain;
    ad::Tensor bias;
};

struct FeedForward {
    Linear first;
    Linear second;
};

struct EncoderLayer {
    Attention self_attention;
    LayerNorm norm1;
    FeedForward feed_forward;
    LayerNorm norm2;
};

struct DecoderLayer {
    Attention self_attention;  // causal
    LayerNorm norm1;
    Attention cross_attention;
    LayerNorm norm2;
    FeedForward feed_forward;
    LayerNorm norm3;
};

struct ParamRef {
    std::string name;
    ad::Tensor* tensor = nullptr;
    const graph_nn::SparseLinearSpec* spec = nullptr;  // null for unmasked parameters
};

struct ConstParamRef {
    std::string name;
    const ad::Tensor* tensor = nullptr;
    const graph_nn::SparseLinearSpec* spec = nullptr;
};

class ForecasterModel {
   public:
    static ForecasterModel build(const ModelConfig& config, const gmrf::DependencyGraph& graph, std::uint64_t seed);

    ModelConfig config;
    gmrf::DependencyGraph graph;
    std::uint64_t seed = 0;
    AttentionConfig attention;

    Linear encoder_embedding;
    std::vector<EncoderLayer> encoder;
    Linear decoder_embedding;
    std::vector<DecoderLayer> decoder;
    Linear projection;  // d_model -> N

    // Per-location affine map between original signal units and model units.
    std::vector<double> signal_mean;
    std::vector<double> signal_scale;

    // Fixed traversal order shared by checkpoints, optimizers and gradient buffers.
    std::vector<ParamRef> parameters();
    std::vector<ConstParamRef> parameters() const;
    std::size_t parameter_count() const;

    // Throws Integrity if any masked parameter has weight outside its mask.
    void audit_masks() const;

    std::vector<double> to_model_units(std::span<const double> signal) const;
    std::vector<double> to_signal_units(std::span<const double> model_values) const;
};

// Per-parameter gradient storage aligned with ForecasterModel::parameters().
struct GradientBuffer {
    std::vector<std::vector<double>> grads;

    static GradientBuffer zeros_like(const ForecasterModel& model);
    void add(const GradientBuffer& other);
    void scale(double s);
};

// Binds model tensors onto a tape, either as constants (inference) or as
// parameters whose gradients flow into a GradientBuffer.
class Binder {
   public:
    Binder(ad::Tape& tape, const ForecasterModel& model);
    Binder(ad::Tape& tape, const ForecasterModel& model, GradientBuffer& grads);

    ad::Var operator()(const ad::Tensor& tensor);
    ad::Tape& tape() { return tape_; }

   private:
    ad::Tape& tape_;
    GradientBuffer* grads_ = nullptr;
    std::unordered_map<const ad::Tensor*, std::size_t> index_;
    std::unordered_map<const ad::Tensor*, ad::Var> bound_;
};

// Sinusoidal encoding indexed by sequence position.
ad::Tensor positional_encoding(std::size_t seq_len, std::size_t d_model);

// Attention weights alpha^(h) for one head: rows are queries, columns keys.
ad::Var scaled_similarities(Binder& bind, ad::Var queries, ad::Var keys, const Attention& block,
                            const AttentionConfig& config, std::size_t head, bool causal_mask);

ad::Var multi_head_attention(Binder& bind, ad::Var queries, ad::Var keys, ad::Var values, const Attention& block,
                             const AttentionConfig& config, bool causal_mask);

// history: T_hist x (N + P) in model units -> T_hist x d_model
ad::Var encoder_forward(Binder& bind, const ForecasterModel& model, ad::Var history);

// decoder_inputs: T' x (N + P) -> predictions T' x N in model units
ad::Var decoder_forward(Binder& bind, const ForecasterModel& model, ad::Var decoder_inputs, ad::Var encoded);

// Teacher-forced forward pass without gradients.
ad::Tensor forward(const ForecasterModel& model, const ad::Tensor& history, const ad::Tensor& decoder_inputs);

// Step 1 feeds the last historical signal with a_{t+1}; step k >= 2 feeds the
// model's own prediction for t+k-1 with a_{t+k}. Returns T' x N model units.
ad::Tensor autoregressive_forecast(const ForecasterModel& model, const ad::Tensor& history,
                                   const ad::Tensor& future_aux);

// Binary checkpoint: magic, JSON header, then length-prefixed little-endian
// float64 buffers in parameters() order followed by signal_mean and
// signal_scale.
void save_model(const std::string& path, const ForecasterModel& model, const std::string& config_hash = {});
// If `expected_graph` is given, its structure must match the checkpoint's.
ForecasterModel load_model(const std::string& path, const gmrf::DependencyGraph* expected_graph = nullptr,
                           std::string* config_hash = nullptr);

}  // namespace forecaster::transformer
