#include "selfrepair/config.hpp"

namespace selfrepair {

std::string to_string(NormKind kind) {
    return kind == NormKind::LayerNorm ? "layernorm" : "rmsnorm";
}

std::string to_string(PositionalKind kind) {
    switch (kind) {
        case PositionalKind::AbsoluteLearned: return "learned";
        case PositionalKind::Rotary: return "rotary";
        case PositionalKind::None: return "none";
    }
    return "none";
}

std::string to_string(ActivationKind kind) {
    return kind == ActivationKind::Gelu ? "gelu" : "relu";
}

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "layernorm") return NormKind::LayerNorm;
    if (s == "rmsnorm") return NormKind::RmsNorm;
    throw ConfigError("unknown norm kind: " + s);
}

PositionalKind positional_kind_from_string(const std::string& s) {
    if (s == "learned") return PositionalKind::AbsoluteLearned;
    if (s == "rotary") return PositionalKind::Rotary;
    if (s == "none") return PositionalKind::None;
    throw ConfigError("unknown positional kind: " + s);
}

ActivationKind activation_kind_from_string(const std::string& s) {
    if (s == "gelu") return ActivationKind::Gelu;
    if (s == "relu") return ActivationKind::Relu;
    throw ConfigError("unknown activation kind: " + s);
}

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
    };
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(d_model, "d_model");
    positive(d_head, "d_head");
    positive(d_mlp, "d_mlp");
    positive(vocab_size, "vocab_size");
    positive(max_seq, "max_seq");
    if (positional_kind == PositionalKind::Rotary && d_head % 2 != 0)
        throw ConfigError("model config: rotary positions require an even d_head");
}

} // namespace selfrepair
