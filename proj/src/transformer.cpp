#include "forecaster/transformer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "forecaster/error.hpp"
#include "forecaster/random.hpp"

namespace forecaster::transformer {

namespace {

using graph_nn::NeuronAllocation;
using graph_nn::SparseLinearSpec;

constexpr char kMagic[8] = {'F', 'C', 'S', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

struct Builder {
    const gmrf::DependencyGraph& graph;
    std::uint64_t seed;
    std::uint64_t stream = 0;

    Linear make(SparseLinearSpec spec) {
        Linear l;
        auto w = graph_nn::init_weights(spec, derive_seed(seed, stream++));
        l.spec = std::move(spec);
        l.weight = std::move(w.weight);
        l.bias = std::move(w.bias);
        return l;
    }

    Linear dense_state(const ModelConfig& c, bool bias) {
        NeuronAllocation a{c.n_locations, c.per_location, c.per_location, c.aux_neurons, c.aux_neurons};
        return make(SparseLinearSpec::make(a, graph, bias));
    }

    Attention attention(const ModelConfig& c) {
        Attention att;
        const std::size_t h = c.heads;
        NeuronAllocation per_head{c.n_locations, c.per_location, c.per_location / h, c.aux_neurons,
                                  c.aux_neurons / h};
        for (std::size_t k = 0; k < h; ++k) att.query.push_back(make(SparseLinearSpec::make(per_head, graph, false)));
        for (std::size_t k = 0; k < h; ++k) att.key.push_back(make(SparseLinearSpec::make(per_head, graph, false)));
        for (std::size_t k = 0; k < h; ++k) att.value.push_back(make(SparseLinearSpec::make(per_head, graph, false)));
        // W^O reads the concatenation [e^(1) || ... || e^(H)], each laid out per head.
        std::vector<int> concat_layout;
        for (std::size_t k = 0; k < h; ++k) {
            auto part = graph_nn::block_layout(c.n_locations, c.per_location / h, c.aux_neurons / h);
            concat_layout.insert(concat_layout.end(), part.begin(), part.end());
        }
        att.output = make(SparseLinearSpec::from_layouts(
            graph_nn::block_layout(c.n_locations, c.per_location, c.aux_neurons), std::move(concat_layout), graph,
            false));
        return att;
    }
};

LayerNorm make_norm(std::size_t d) {
    return LayerNorm{ad::Tensor::filled(1, d, 1.0), ad::Tensor::zeros(1, d)};
}

void append_linear(std::vector<ParamRef>& out, const std::string& name, Linear& l) {
    out.push_back({name + ".weight", &l.weight, &l.spec});
    if (l.spec.bias_enabled) out.push_back({name + ".bias", &l.bias, nullptr});
}

void append_attention(std::vector<ParamRef>& out, const std::string& name, Attention& att) {
    for (std::size_t h = 0; h < att.query.size(); ++h) append_linear(out, name + ".query." + std::to_string(h), att.query[h]);
    for (std::size_t h = 0; h < att.key.size(); ++h) append_linear(out, name + ".key." + std::to_string(h), att.key[h]);
    for (std::size_t h = 0; h < att.value.size(); ++h) append_linear(out, name + ".value." + std::to_string(h), att.value[h]);
    append_linear(out, name + ".output", att.output);
}

void append_norm(std::vector<ParamRef>& out, const std::string& name, LayerNorm& n) {
    out.push_back({name + ".gain", &n.gain, nullptr});
    out.push_back({name + ".bias", &n.bias, nullptr});
}

void append_ff(std::vector<ParamRef>& out, const std::string& name, FeedForward& ff) {
    append_linear(out, name + ".first", ff.first);
    append_linear(out, name + ".second", ff.second);
}

ad::Var apply_linear(Binder& bind, const Linear& l, ad::Var x) {
    std::optional<ad::Var> bias;
    if (l.spec.bias_enabled) bias = bind(l.bias);
    return graph_nn::sparse_linear(bind.tape(), l.spec, x, bind(l.weight), bias);
}

ad::Var apply_norm(Binder& bind, const LayerNorm& n, ad::Var x, double eps) {
    return bind.tape().layer_norm(x, bind(n.gain), bind(n.bias), 1, eps);
}

ad::Var apply_ff(Binder& bind, const FeedForward& ff, ad::Var x) {
    return apply_linear(bind, ff.second, bind.tape().relu(apply_linear(bind, ff.first, x)));
}

ad::Var embed(Binder& bind, const Linear& embedding, ad::Var inputs, std::size_t d_model) {
    ad::Tape& tape = bind.tape();
    const std::size_t rows = tape.value(inputs).rows();
    ad::Var e = tape.relu(apply_linear(bind, embedding, inputs));
    return tape.add(e, tape.constant(positional_encoding(rows, d_model)));
}

void require_width(const ad::Tensor& t, std::size_t width, const char* what) {
    if (t.rank() > 2 || t.cols() != width) {
        fail(ErrorKind::Dimension, std::string(what) + " has shape " + ad::shape_string(t.shape) +
                                       ", expected rows of width " + std::to_string(width));
    }
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

struct Reader {
    const std::string& data;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n) {
        if (pos + n > data.size()) fail(ErrorKind::Parse, path + ": checkpoint truncated");
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + b])) << (8 * b);
        pos += 8;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + b])) << (8 * b);
        pos += 4;
        return v;
    }
    std::vector<double> doubles() {
        const std::uint64_t n = u64();
        if (n > (data.size() - pos) / 8) fail(ErrorKind::Parse, path + ": buffer length exceeds file size");
        std::vector<double> out(n);
        for (auto& d : out) d = std::bit_cast<double>(u64());
        return out;
    }
};

void put_doubles(std::string& out, std::span<const double> values) {
    put_u64(out, values.size());
    for (double d : values) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

}  // namespace

void ModelConfig::validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorKind::Configuration, msg); };
    if (n_locations == 0) bad("model needs at least one location");
    if (per_location == 0) bad("per_location neuron count must be positive");
    if (aux_neurons == 0) bad("aux neuron count must be positive");
    if (heads == 0) bad("head count must be positive");
    if (per_location % heads != 0 || aux_neurons % heads != 0) {
        bad("head count " + std::to_string(heads) + " must divide per_location (" + std::to_string(per_location) +
            ") and aux_neurons (" + std::to_string(aux_neurons) + ")");
    }
    if (dropout != 0.0) bad("dropout is not supported; set it to 0");
    if (!(layer_norm_eps > 0.0)) bad("layer_norm_eps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"n_locations", n_locations}, {"n_aux_features", n_aux_features}, {"per_location", per_location},
            {"aux_neurons", aux_neurons},  {"heads", heads},                   {"layers", layers},
            {"query_scaling", query_scaling}, {"layer_norm_eps", layer_norm_eps}, {"dropout", dropout}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
    ModelConfig c;
    try {
        c.n_locations = doc.value("n_locations", c.n_locations);
        c.n_aux_features = doc.value("n_aux_features", c.n_aux_features);
        c.per_location = doc.value("per_location", c.per_location);
        c.aux_neurons = doc.value("aux_neurons", c.aux_neurons);
        c.heads = doc.value("heads", c.heads);
        c.layers = doc.value("layers", c.layers);
        c.query_scaling = doc.value("query_scaling", c.query_scaling);
        c.layer_norm_eps = doc.value("layer_norm_eps", c.layer_norm_eps);
        c.dropout = doc.value("dropout", c.dropout);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, std::string("bad model config: ") + e.what());
    }
    return c;
}

std::vector<double> query_scaling_vector(std::size_t d_signal, std::size_t d_aux) {
    const double ds = static_cast<double>(d_signal);
    const double da = static_cast<double>(d_aux);
    std::vector<double> r;
    r.reserve(d_signal + d_aux);
    r.insert(r.end(), d_signal, std::sqrt(0.5 + da / (2.0 * ds)));
    r.insert(r.end(), d_aux, std::sqrt(0.5 + ds / (2.0 * da)));
    return r;
}

AttentionConfig AttentionConfig::make(const ModelConfig& config) {
    AttentionConfig a;
    a.heads = config.heads;
    a.d_model = config.d_model();
    a.d_signal = config.d_signal();
    a.d_aux = config.d_aux();
    a.apply_scaling = config.query_scaling;
    a.r = query_scaling_vector(a.d_signal, a.d_aux);
    return a;
}

ForecasterModel ForecasterModel::build(const ModelConfig& config, const gmrf::DependencyGraph& graph,
                                       std::uint64_t seed) {
    config.validate();
    if (graph.n_locations != config.n_locations) {
        fail(ErrorKind::Configuration, "graph has " + std::to_string(graph.n_locations) + " nodes but model expects " +
                                           std::to_string(config.n_locations) + " locations");
    }
    ForecasterModel m;
    m.config = config;
    m.graph = graph;
    m.seed = seed;
    m.attention = AttentionConfig::make(config);
    const std::size_t d = config.d_model();
    Builder b{graph, seed};

    NeuronAllocation embed_alloc{config.n_locations, 1, config.per_location, config.n_aux_features,
                                 config.aux_neurons};
    m.encoder_embedding = b.make(SparseLinearSpec::make(embed_alloc, graph, true));
    for (std::size_t l = 0; l < config.layers; ++l) {
        EncoderLayer layer;
        layer.self_attention = b.attention(config);
        layer.norm1 = make_norm(d);
        layer.feed_forward.first = b.dense_state(config, true);
        layer.feed_forward.second = b.dense_state(config, true);
        layer.norm2 = make_norm(d);
        m.encoder.push_back(std::move(layer));
    }
    m.decoder_embedding = b.make(SparseLinearSpec::make(embed_alloc, graph, true));
    for (std::size_t l = 0; l < config.layers; ++l) {
        DecoderLayer layer;
        layer.self_attention = b.attention(config);
        layer.norm1 = make_norm(d);
        layer.cross_attention = b.attention(config);
        layer.norm2 = make_norm(d);
        layer.feed_forward.first = b.dense_state(config, true);
        layer.feed_forward.second = b.dense_state(config, true);
        layer.norm3 = make_norm(d);
        m.decoder.push_back(std::move(layer));
    }
    NeuronAllocation proj_alloc{config.n_locations, config.per_location, 1, config.aux_neurons, 0};
    m.projection = b.make(SparseLinearSpec::make(proj_alloc, graph, true));
    m.signal_mean.assign(config.n_locations, 0.0);
    m.signal_scale.assign(config.n_locations, 1.0);
    return m;
}

std::vector<ParamRef> ForecasterModel::parameters() {
    std::vector<ParamRef> out;
    append_linear(out, "encoder_embedding", encoder_embedding);
    for (std::size_t l = 0; l < encoder.size(); ++l) {
        const std::string p = "encoder." + std::to_string(l);
        append_attention(out, p + ".self_attention", encoder[l].self_attention);
        append_norm(out, p + ".norm1", encoder[l].norm1);
        append_ff(out, p + ".feed_forward", encoder[l].feed_forward);
        append_norm(out, p + ".norm2", encoder[l].norm2);
    }
    append_linear(out, "decoder_embedding", decoder_embedding);
    for (std::size_t l = 0; l < decoder.size(); ++l) {
        const std::string p = "decoder." + std::to_string(l);
        append_attention(out, p + ".self_attention", decoder[l].self_attention);
        append_norm(out, p + ".norm1", decoder[l].norm1);
        append_attention(out, p + ".cross_attention", decoder[l].cross_attention);
        append_norm(out, p + ".norm2", decoder[l].norm2);
        append_ff(out, p + ".feed_forward", decoder[l].feed_forward);
        append_norm(out, p + ".norm3", decoder[l].norm3);
    }
    append_linear(out, "projection", projection);
    return out;
}

std::vector<ConstParamRef> ForecasterModel::parameters() const {
    auto refs = const_cast<ForecasterModel*>(this)->parameters();
    std::vector<ConstParamRef> out;
    out.reserve(refs.size());
    for (auto& r : refs) out.push_back({std::move(r.name), r.tensor, r.spec});
    return out;
}

std::size_t ForecasterModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor->size();
    return n;
}

void ForecasterModel::audit_masks() const {
    for (const auto& p : parameters()) {
        if (p.spec) graph_nn::check_mask_integrity(*p.spec, *p.tensor, p.name);
    }
}

std::vector<double> ForecasterModel::to_model_units(std::span<const double> signal) const {
    std::vector<double> out(signal.size());
    for (std::size_t i = 0; i < signal.size(); ++i) out[i] = (signal[i] - signal_mean[i]) / signal_scale[i];
    return out;
}

std::vector<double> ForecasterModel::to_signal_units(std::span<const double> model_values) const {
    std::vector<double> out(model_values.size());
    for (std::size_t i = 0; i < model_values.size(); ++i) out[i] = model_values[i] * signal_scale[i] + signal_mean[i];
    return out;
}

GradientBuffer GradientBuffer::zeros_like(const ForecasterModel& model) {
    GradientBuffer g;
    for (const auto& p : model.parameters()) g.grads.emplace_back(p.tensor->size(), 0.0);
    return g;
}

void GradientBuffer::add(const GradientBuffer& other) {
    if (other.grads.size() != grads.size()) fail(ErrorKind::Dimension, "gradient buffers differ in layout");
    for (std::size_t p = 0; p < grads.size(); ++p) {
        for (std::size_t k = 0; k < grads[p].size(); ++k) grads[p][k] += other.grads[p][k];
    }
}

void GradientBuffer::scale(double s) {
    for (auto& g : grads) {
        for (double& v : g) v *= s;
    }
}

Binder::Binder(ad::Tape& tape, const ForecasterModel& model) : tape_(tape) {
    std::size_t k = 0;
    for (const auto& p : model.parameters()) index_[p.tensor] = k++;
}

Binder::Binder(ad::Tape& tape, const ForecasterModel& model, GradientBuffer& grads) : Binder(tape, model) {
    if (grads.grads.size() != index_.size()) fail(ErrorKind::Dimension, "gradient buffer does not match model");
    grads_ = &grads;
}

ad::Var Binder::operator()(const ad::Tensor& tensor) {
    if (auto it = bound_.find(&tensor); it != bound_.end()) return it->second;
    const auto idx = index_.find(&tensor);
    if (idx == index_.end()) fail(ErrorKind::Configuration, "tensor is not a parameter of the bound model");
    ad::Var v = grads_ ? tape_.parameter(tensor, std::span<double>(grads_->grads[idx->second]))
                       : tape_.constant(ad::Tensor(tensor.shape, tensor.values));
    bound_.emplace(&tensor, v);
    return v;
}

ad::Tensor positional_encoding(std::size_t seq_len, std::size_t d_model) {
    ad::Tensor pe = ad::Tensor::zeros(seq_len, d_model);
    for (std::size_t pos = 0; pos < seq_len; ++pos) {
        for (std::size_t i = 0; i < d_model; ++i) {
            const double pair = static_cast<double>(i - i % 2);
            const double angle =
                static_cast<double>(pos) / std::pow(10000.0, pair / static_cast<double>(d_model));
            pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

ad::Var scaled_similarities(Binder& bind, ad::Var queries, ad::Var keys, const Attention& block,
                            const AttentionConfig& config, std::size_t head, bool causal_mask) {
    ad::Tape& tape = bind.tape();
    if (head >= block.query.size()) fail(ErrorKind::Configuration, "head index out of range");
    ad::Var q = config.apply_scaling ? tape.scale_by_vector(queries, config.r) : queries;
    ad::Var qh = apply_linear(bind, block.query[head], q);
    ad::Var kh = apply_linear(bind, block.key[head], keys);
    ad::Var scores = tape.matmul(qh, tape.transpose(kh));
    scores = tape.scale(scores, 1.0 / std::sqrt(static_cast<double>(config.d_model) / static_cast<double>(config.heads)));
    return causal_mask ? tape.causal_softmax(scores) : tape.softmax(scores, 1);
}

ad::Var multi_head_attention(Binder& bind, ad::Var queries, ad::Var keys, ad::Var values, const Attention& block,
                             const AttentionConfig& config, bool causal_mask) {
    ad::Tape& tape = bind.tape();
    if (block.query.size() != config.heads) fail(ErrorKind::Configuration, "attention block head count mismatch");
    std::vector<ad::Var> heads;
    heads.reserve(config.heads);
    for (std::size_t h = 0; h < config.heads; ++h) {
        ad::Var alpha = scaled_similarities(bind, queries, keys, block, config, h, causal_mask);
        ad::Var vh = apply_linear(bind, block.value[h], values);
        heads.push_back(tape.matmul(alpha, vh));
    }
    ad::Var joined = heads.size() == 1 ? heads[0] : tape.concat(heads, 1);
    return apply_linear(bind, block.output, joined);
}

ad::Var encoder_forward(Binder& bind, const ForecasterModel& model, ad::Var history) {
    ad::Tape& tape = bind.tape();
    require_width(tape.value(history), model.config.input_width(), "encoder input");
    const double eps = model.config.layer_norm_eps;
    ad::Var x = embed(bind, model.encoder_embedding, history, model.config.d_model());
    for (const auto& layer : model.encoder) {
        ad::Var att = multi_head_attention(bind, x, x, x, layer.self_attention, model.attention, false);
        x = apply_norm(bind, layer.norm1, tape.add(x, att), eps);
        x = apply_norm(bind, layer.norm2, tape.add(x, apply_ff(bind, layer.feed_forward, x)), eps);
    }
    return x;
}

ad::Var decoder_forward(Binder& bind, const ForecasterModel& model, ad::Var decoder_inputs, ad::Var encoded) {
    ad::Tape& tape = bind.tape();
    require_width(tape.value(decoder_inputs), model.config.input_width(), "decoder input");
    require_width(tape.value(encoded), model.config.d_model(), "encoder output");
    const double eps = model.config.layer_norm_eps;
    ad::Var x = embed(bind, model.decoder_embedding, decoder_inputs, model.config.d_model());
    for (const auto& layer : model.decoder) {
        ad::Var self = multi_head_attention(bind, x, x, x, layer.self_attention, model.attention, true);
        x = apply_norm(bind, layer.norm1, tape.add(x, self), eps);
        ad::Var cross = multi_head_attention(bind, x, encoded, encoded, layer.cross_attention, model.attention, false);
        x = apply_norm(bind, layer.norm2, tape.add(x, cross), eps);
        x = apply_norm(bind, layer.norm3, tape.add(x, apply_ff(bind, layer.feed_forward, x)), eps);
    }
    return apply_linear(bind, model.projection, x);
}

ad::Tensor forward(const ForecasterModel& model, const ad::Tensor& history, const ad::Tensor& decoder_inputs) {
    ad::Tape tape;
    Binder bind(tape, model);
    ad::Var enc = encoder_forward(bind, model, tape.constant(ad::Tensor(history.shape, history.values)));
    ad::Var out =
        decoder_forward(bind, model, tape.constant(ad::Tensor(decoder_inputs.shape, decoder_inputs.values)), enc);
    return tape.value(out);
}

ad::Tensor autoregressive_forecast(const ForecasterModel& model, const ad::Tensor& history,
                                   const ad::Tensor& future_aux) {
    const std::size_t n = model.config.n_locations;
    const std::size_t p = model.config.n_aux_features;
    require_width(history, n + p, "history");
    require_width(future_aux, p, "future aux");
    if (history.rows() == 0) fail(ErrorKind::Window, "autoregressive forecast needs at least one history element");
    const std::size_t horizon = future_aux.rows();

    ad::Tape enc_tape;
    Binder enc_bind(enc_tape, model);
    const ad::Tensor encoded =
        enc_tape.value(encoder_forward(enc_bind, model, enc_tape.constant(ad::Tensor(history.shape, history.values))));

    // Every step decodes all T' rows; rows past the current step are still
    // zero and, by causality, cannot affect the rows already filled.
    ad::Tensor inputs = ad::Tensor::zeros(horizon, n + p);
    ad::Tensor predictions = ad::Tensor::zeros(horizon, n);
    const std::size_t last = history.rows() - 1;
    for (std::size_t i = 0; i < n; ++i) inputs(0, i) = history(last, i);
    for (std::size_t step = 0; step < horizon; ++step) {
        for (std::size_t k = 0; k < p; ++k) inputs(step, n + k) = future_aux(step, k);
        if (step > 0) {
            for (std::size_t i = 0; i < n; ++i) inputs(step, i) = predictions(step - 1, i);
        }
        ad::Tape tape;
        Binder bind(tape, model);
        ad::Var enc = tape.constant(encoded);
        const ad::Tensor& out = tape.value(decoder_forward(bind, model, tape.constant(inputs), enc));
        for (std::size_t i = 0; i < n; ++i) predictions(step, i) = out(step, i);
    }
    return predictions;
}

void save_model(const std::string& path, const ForecasterModel& model, const std::string& config_hash) {
    nlohmann::json header;
    header["format"] = "forecaster-checkpoint";
    header["version"] = kFormatVersion;
    header["config"] = model.config.to_json();
    header["graph"] = gmrf::graph_to_json(model.graph);
    header["graph_hash"] = hex64(model.graph.structure_hash());
    header["seed"] = model.seed;
    if (!config_hash.empty()) header["config_hash"] = config_hash;
    auto params = nlohmann::json::array();
    for (const auto& p : model.parameters()) params.push_back({{"name", p.name}, {"shape", p.tensor->shape}});
    params.push_back({{"name", "signal_mean"}, {"shape", {model.signal_mean.size()}}});
    params.push_back({{"name", "signal_scale"}, {"shape", {model.signal_scale.size()}}});
    header["buffers"] = std::move(params);
    const std::string header_text = header.dump();

    std::string blob(kMagic, kMagic + sizeof kMagic);
    put_u32(blob, kFormatVersion);
    put_u64(blob, header_text.size());
    blob += header_text;
    const auto refs = model.parameters();
    put_u64(blob, refs.size() + 2);
    for (const auto& p : refs) put_doubles(blob, p.tensor->values);
    put_doubles(blob, model.signal_mean);
    put_doubles(blob, model.signal_scale);

    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write checkpoint " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

ForecasterModel load_model(const std::string& path, const gmrf::DependencyGraph* expected_graph,
                           std::string* config_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Dependency, "missing checkpoint " + path);
    const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader rd{data, 0, path};
    rd.need(sizeof kMagic);
    if (std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) fail(ErrorKind::Parse, path + ": not a checkpoint file");
    rd.pos = sizeof kMagic;
    if (rd.u32() != kFormatVersion) fail(ErrorKind::Parse, path + ": unsupported checkpoint version");
    const std::uint64_t header_len = rd.u64();
    rd.need(header_len);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(data.substr(rd.pos, header_len));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, path + ": bad checkpoint header: " + e.what());
    }
    rd.pos += header_len;

    ModelConfig config;
    gmrf::DependencyGraph graph;
    std::uint64_t seed = 0;
    std::string stored_hash;
    try {
        config = ModelConfig::from_json(header.at("config"));
        graph = gmrf::graph_from_json(header.at("graph"));
        seed = header.at("seed").get<std::uint64_t>();
        stored_hash = header.at("graph_hash").get<std::string>();
        if (config_hash) *config_hash = header.value("config_hash", std::string{});
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, path + ": incomplete checkpoint header: " + e.what());
    }
    if (stored_hash != hex64(graph.structure_hash())) {
        fail(ErrorKind::Integrity, path + ": stored graph does not match its recorded hash");
    }
    if (expected_graph && expected_graph->structure_hash() != graph.structure_hash()) {
        fail(ErrorKind::Configuration, path + ": checkpoint was trained on a different dependency graph");
    }

    ForecasterModel model = ForecasterModel::build(config, graph, seed);
    auto refs = model.parameters();
    if (rd.u64() != refs.size() + 2) fail(ErrorKind::Parse, path + ": unexpected parameter buffer count");
    for (auto& p : refs) {
        auto values = rd.doubles();
        if (values.size() != p.tensor->size()) {
            fail(ErrorKind::Parse, path + ": buffer for '" + p.name + "' has " + std::to_string(values.size()) +
                                       " values, expected " + std::to_string(p.tensor->size()));
        }
        p.tensor->values = std::move(values);
    }
    model.signal_mean = rd.doubles();
    model.signal_scale = rd.doubles();
    if (model.signal_mean.size() != config.n_locations || model.signal_scale.size() != config.n_locations) {
        fail(ErrorKind::Parse, path + ": standardization buffers do not match location count");
    }
    if (rd.pos != data.size()) fail(ErrorKind::Parse, path + ": trailing bytes after parameter buffers");
    model.audit_masks();
    return model;
}

}  // namespace forecaster::transformer
