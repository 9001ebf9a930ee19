#include "selfrepair/model.hpp"

#include <cmath>
#include <cstring>
#include <functional>

#include "detail.hpp"
#include "selfrepair/tensor_store.hpp"

namespace selfrepair {

namespace {

std::string layer_name(int i, const char* suffix) {
    return "layer." + std::to_string(i) + "." + suffix;
}

struct TensorView {
    std::string name;
    const std::vector<float>* data;
    std::vector<std::int64_t> shape;
};

// Every tensor the model owns, in file order, with its expected shape. The
// same enumeration drives validation, hashing, and saving.
std::vector<TensorView> enumerate_tensors(const ModelConfig& c, const ModelWeights& w) {
    const bool ln = c.norm_kind == NormKind::LayerNorm;
    const std::int64_t dm = c.d_model;
    const std::int64_t hd = static_cast<std::int64_t>(c.n_heads) * c.d_head;

    std::vector<TensorView> out;
    out.push_back({"embed.tok", &w.embed_tok, {c.vocab_size, dm}});
    if (c.positional_kind == PositionalKind::AbsoluteLearned)
        out.push_back({"embed.pos", &w.embed_pos, {c.max_seq, dm}});
    for (int i = 0; i < c.n_layers; ++i) {
        const LayerWeights& l = w.layers[static_cast<std::size_t>(i)];
        out.push_back({layer_name(i, "norm1.gain"), &l.norm1_gain, {dm}});
        if (ln) out.push_back({layer_name(i, "norm1.bias"), &l.norm1_bias, {dm}});
        out.push_back({layer_name(i, "attn.wq"), &l.wq, {hd, dm}});
        out.push_back({layer_name(i, "attn.wk"), &l.wk, {hd, dm}});
        out.push_back({layer_name(i, "attn.wv"), &l.wv, {hd, dm}});
        out.push_back({layer_name(i, "attn.wo"), &l.wo, {hd, dm}});
        out.push_back({layer_name(i, "attn.bo"), &l.bo, {dm}});
        out.push_back({layer_name(i, "norm2.gain"), &l.norm2_gain, {dm}});
        if (ln) out.push_back({layer_name(i, "norm2.bias"), &l.norm2_bias, {dm}});
        out.push_back({layer_name(i, "mlp.win"), &l.win, {dm, c.d_mlp}});
        out.push_back({layer_name(i, "mlp.bin"), &l.bin, {c.d_mlp}});
        out.push_back({layer_name(i, "mlp.wout"), &l.wout, {c.d_mlp, dm}});
        out.push_back({layer_name(i, "mlp.bout"), &l.bout, {dm}});
    }
    out.push_back({"final_norm.gain", &w.final_norm_gain, {dm}});
    if (ln) out.push_back({"final_norm.bias", &w.final_norm_bias, {dm}});
    out.push_back({"unembed.w", &w.unembed_w, {c.vocab_size, dm}});
    if (!w.unembed_b.empty())
        out.push_back({"unembed.b", &w.unembed_b, {c.vocab_size}});
    return out;
}

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string config_signature(const ModelConfig& c) {
    return "n_layers=" + std::to_string(c.n_layers) + ";n_heads=" + std::to_string(c.n_heads) +
           ";d_model=" + std::to_string(c.d_model) + ";d_head=" + std::to_string(c.d_head) +
           ";d_mlp=" + std::to_string(c.d_mlp) + ";vocab_size=" + std::to_string(c.vocab_size) +
           ";max_seq=" + std::to_string(c.max_seq) +
           ";parallel=" + (c.parallel_attention ? "1" : "0") + ";norm=" + to_string(c.norm_kind) +
           ";pos=" + to_string(c.positional_kind) + ";act=" + to_string(c.activation_kind);
}

} // namespace

Model::Model(ModelConfig config, ModelWeights weights)
    : config_(config), weights_(std::move(weights)) {
    config_.validate();
    if (weights_.layers.size() != static_cast<std::size_t>(config_.n_layers))
        throw DataError("model has " + std::to_string(weights_.layers.size()) +
                        " layers, config expects " + std::to_string(config_.n_layers));

    const std::string sig = config_signature(config_);
    std::uint64_t h = detail::fnv1a(sig.data(), sig.size());
    for (const TensorView& t : enumerate_tensors(config_, weights_)) {
        const std::int64_t expected = shape_numel(t.shape);
        if (static_cast<std::int64_t>(t.data->size()) != expected)
            throw DataError("tensor " + t.name + " has " + std::to_string(t.data->size()) +
                            " values, expected " + std::to_string(expected));
        for (float v : *t.data)
            if (!std::isfinite(v)) throw DataError("tensor " + t.name + " holds a non-finite value");
        h = detail::fnv1a(h, t.name.data(), t.name.size());
        h = detail::fnv1a(h, t.data->data(), t.data->size() * sizeof(float));
    }
    weight_hash_ = h;

    // Vocabulary-mean unembedding row/bias, used to center every readout.
    mean_unembed_row_.assign(static_cast<std::size_t>(config_.d_model), 0.0);
    for (int v = 0; v < config_.vocab_size; ++v) {
        const float* row = weights_.unembed_w.data() +
                           static_cast<std::size_t>(v) * static_cast<std::size_t>(config_.d_model);
        for (int d = 0; d < config_.d_model; ++d) mean_unembed_row_[static_cast<std::size_t>(d)] += row[d];
    }
    for (double& v : mean_unembed_row_) v /= config_.vocab_size;
    if (!weights_.unembed_b.empty()) {
        mean_unembed_bias_ =
            detail::sum_d(weights_.unembed_b.data(), config_.vocab_size) / config_.vocab_size;
    }

    const auto dm = static_cast<std::size_t>(config_.d_model);
    const auto dmlp = static_cast<std::size_t>(config_.d_mlp);
    win_transposed_.resize(static_cast<std::size_t>(config_.n_layers) * dmlp * dm);
    for (int l = 0; l < config_.n_layers; ++l) {
        const float* win = weights_.layers[static_cast<std::size_t>(l)].win.data();
        float* dst = &win_transposed_[static_cast<std::size_t>(l) * dmlp * dm];
        for (std::size_t i = 0; i < dm; ++i)
            for (std::size_t j = 0; j < dmlp; ++j) dst[j * dm + i] = win[i * dmlp + j];
    }
}

std::span<const float> Model::win_transposed(int layer) const {
    const auto dm = static_cast<std::size_t>(config_.d_model);
    const auto dmlp = static_cast<std::size_t>(config_.d_mlp);
    return {&win_transposed_[static_cast<std::size_t>(layer) * dmlp * dm], dmlp * dm};
}

std::span<const float> Model::unembed_row(int token) const {
    return {weights_.unembed_w.data() +
                static_cast<std::size_t>(token) * static_cast<std::size_t>(config_.d_model),
            static_cast<std::size_t>(config_.d_model)};
}

std::span<const float> Model::embed_row(int token) const {
    return {weights_.embed_tok.data() +
                static_cast<std::size_t>(token) * static_cast<std::size_t>(config_.d_model),
            static_cast<std::size_t>(config_.d_model)};
}

void Model::validate_tokens(const TokenSequence& tokens) const {
    if (tokens.ids.empty()) throw DataError("token sequence is empty");
    if (tokens.length() > config_.max_seq)
        throw DataError("token sequence of length " + std::to_string(tokens.length()) +
                        " exceeds max_seq " + std::to_string(config_.max_seq));
    for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
        const auto id = tokens.ids[i];
        if (id < 0 || id >= config_.vocab_size)
            throw DataError("token id " + std::to_string(id) + " at position " + std::to_string(i) +
                            " is outside the vocabulary");
    }
}

Model init_toy_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    detail::SplitMix64 rng(seed ^ 0x5e1f5e1fu);
    const float proj_scale = 1.0f / std::sqrt(static_cast<float>(config.d_model));
    const bool ln = config.norm_kind == NormKind::LayerNorm;

    auto fill_scaled = [&](std::vector<float>& v, std::size_t n, float scale) {
        v.resize(n);
        for (auto& x : v) x = rng.uniform_pm1() * scale;
    };
    auto fill_gain = [&](std::vector<float>& v, std::size_t n) {
        v.resize(n);
        for (auto& x : v) x = 1.0f + 0.2f * rng.uniform_pm1();
    };

    const auto dm = static_cast<std::size_t>(config.d_model);
    const auto hd = static_cast<std::size_t>(config.n_heads) * static_cast<std::size_t>(config.d_head);
    const auto mlp = static_cast<std::size_t>(config.d_mlp);

    ModelWeights w;
    fill_scaled(w.embed_tok, static_cast<std::size_t>(config.vocab_size) * dm, proj_scale);
    if (config.positional_kind == PositionalKind::AbsoluteLearned)
        fill_scaled(w.embed_pos, static_cast<std::size_t>(config.max_seq) * dm, proj_scale);
    w.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (LayerWeights& l : w.layers) {
        fill_gain(l.norm1_gain, dm);
        if (ln) fill_scaled(l.norm1_bias, dm, 0.05f);
        fill_scaled(l.wq, hd * dm, proj_scale);
        fill_scaled(l.wk, hd * dm, proj_scale);
        fill_scaled(l.wv, hd * dm, proj_scale);
        fill_scaled(l.wo, hd * dm, proj_scale);
        fill_scaled(l.bo, dm, 0.05f);
        fill_gain(l.norm2_gain, dm);
        if (ln) fill_scaled(l.norm2_bias, dm, 0.05f);
        fill_scaled(l.win, dm * mlp, proj_scale);
        fill_scaled(l.bin, mlp, 0.05f);
        fill_scaled(l.wout, mlp * dm, proj_scale);
        fill_scaled(l.bout, dm, 0.05f);
    }
    fill_gain(w.final_norm_gain, dm);
    if (ln) fill_scaled(w.final_norm_bias, dm, 0.05f);
    fill_scaled(w.unembed_w, static_cast<std::size_t>(config.vocab_size) * dm, proj_scale);
    return Model(config, std::move(w));
}

namespace {

ModelConfig config_from_metadata(const TensorStore& store, const std::filesystem::path& path) {
    auto get = [&](const char* key) -> std::string {
        auto it = store.metadata.find(key);
        if (it == store.metadata.end())
            throw DataError(path.string() + ": container metadata is missing \"" +
                            std::string(key) + "\"; pass an explicit architecture");
        return it->second;
    };
    auto get_int = [&](const char* key) {
        try {
            return std::stoi(get(key));
        } catch (const std::logic_error&) {
            throw DataError(path.string() + ": container metadata \"" + std::string(key) +
                            "\" is not an integer");
        }
    };
    ModelConfig c;
    c.n_layers = get_int("n_layers");
    c.n_heads = get_int("n_heads");
    c.d_model = get_int("d_model");
    c.d_head = get_int("d_head");
    c.d_mlp = get_int("d_mlp");
    c.vocab_size = get_int("vocab_size");
    c.max_seq = get_int("max_seq");
    c.parallel_attention = get("parallel_attention") == "true";
    c.norm_kind = norm_kind_from_string(get("norm_kind"));
    c.positional_kind = positional_kind_from_string(get("positional_kind"));
    c.activation_kind = activation_kind_from_string(get("activation_kind"));
    return c;
}

Model model_from_store(const TensorStore& store, const ModelConfig& config,
                       const std::filesystem::path& path) {
    config.validate();
    ModelWeights w;
    w.layers.resize(static_cast<std::size_t>(config.n_layers));

    // Views describe every tensor the config requires; sizing the vectors
    // first lets enumerate_tensors hand back stable pointers.
    std::size_t consumed = 0;
    auto take = [&](const TensorView& view) {
        auto it = store.tensors.find(view.name);
        if (it == store.tensors.end())
            throw DataError(path.string() + ": missing tensor: " + view.name);
        const NamedTensor& t = it->second;
        if (t.shape != view.shape) {
            std::string want, got;
            for (auto d : view.shape) want += (want.empty() ? "" : "x") + std::to_string(d);
            for (auto d : t.shape) got += (got.empty() ? "" : "x") + std::to_string(d);
            throw DataError(path.string() + ": tensor " + view.name + " has shape " + got +
                            ", expected " + want);
        }
        *const_cast<std::vector<float>*>(view.data) = t.data;
        ++consumed;
    };

    const bool has_unembed_bias = store.contains("unembed.b");
    if (has_unembed_bias) w.unembed_b.resize(1); // enumerated only when non-empty
    for (const TensorView& view : enumerate_tensors(config, w)) take(view);

    if (consumed != store.tensors.size()) {
        for (const auto& [name, tensor] : store.tensors) {
            bool known = false;
            for (const TensorView& view : enumerate_tensors(config, w))
                if (view.name == name) { known = true; break; }
            if (!known) throw DataError(path.string() + ": unexpected tensor: " + name);
        }
    }
    return Model(config, std::move(w));
}

} // namespace

Model load_model(const std::filesystem::path& path) {
    const TensorStore store = read_tensor_store(path);
    return model_from_store(store, config_from_metadata(store, path), path);
}

Model load_model(const std::filesystem::path& path, const ModelConfig& expected_config) {
    const TensorStore store = read_tensor_store(path);
    if (!store.metadata.empty()) {
        bool has_arch = store.metadata.count("n_layers") != 0;
        if (has_arch && !(config_from_metadata(store, path) == expected_config))
            throw DataError(path.string() + ": container architecture differs from the expected one");
    }
    return model_from_store(store, expected_config, path);
}

void save_model(const Model& model, const std::filesystem::path& path) {
    const ModelConfig& c = model.config();
    TensorStore store;
    store.metadata["n_layers"] = std::to_string(c.n_layers);
    store.metadata["n_heads"] = std::to_string(c.n_heads);
    store.metadata["d_model"] = std::to_string(c.d_model);
    store.metadata["d_head"] = std::to_string(c.d_head);
    store.metadata["d_mlp"] = std::to_string(c.d_mlp);
    store.metadata["vocab_size"] = std::to_string(c.vocab_size);
    store.metadata["max_seq"] = std::to_string(c.max_seq);
    store.metadata["parallel_attention"] = c.parallel_attention ? "true" : "false";
    store.metadata["norm_kind"] = to_string(c.norm_kind);
    store.metadata["positional_kind"] = to_string(c.positional_kind);
    store.metadata["activation_kind"] = to_string(c.activation_kind);

    for (const TensorView& view : enumerate_tensors(c, model.weights())) {
        NamedTensor t;
        t.shape = view.shape;
        t.data = *view.data;
        store.tensors.emplace(view.name, std::move(t));
    }
    write_tensor_store(store, path);
}

} // namespace selfrepair
