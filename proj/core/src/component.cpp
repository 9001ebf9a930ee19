#include "selfrepair/component.hpp"

#include <cstdio>
#include <tuple>

namespace selfrepair {

namespace {

// Within-layer rank for the canonical order: heads, attn bias, mlp, mlp bias,
// neurons.
int class_rank(ComponentId::Kind kind) {
    switch (kind) {
        case ComponentId::Kind::Embed: return 0;
        case ComponentId::Kind::Head: return 1;
        case ComponentId::Kind::AttnBias: return 2;
        case ComponentId::Kind::MlpLayer: return 3;
        case ComponentId::Kind::MlpBias: return 4;
        case ComponentId::Kind::Neuron: return 5;
    }
    return 6;
}

} // namespace

void ComponentId::validate(const ModelConfig& config) const {
    auto layer_ok = layer >= 0 && layer < config.n_layers;
    switch (kind) {
        case Kind::Embed:
            return;
        case Kind::Head:
            if (!layer_ok || index < 0 || index >= config.n_heads)
                throw ContractError("component out of bounds: " + str());
            return;
        case Kind::AttnBias:
        case Kind::MlpLayer:
        case Kind::MlpBias:
            if (!layer_ok) throw ContractError("component out of bounds: " + str());
            return;
        case Kind::Neuron:
            if (!layer_ok || index < 0 || index >= config.d_mlp)
                throw ContractError("component out of bounds: " + str());
            return;
    }
    throw ContractError("component has unknown kind");
}

std::string ComponentId::str() const {
    char buf[48];
    switch (kind) {
        case Kind::Embed:
            return "embed";
        case Kind::Head:
            std::snprintf(buf, sizeof(buf), "L%dH%d", layer, index);
            return buf;
        case Kind::AttnBias:
            std::snprintf(buf, sizeof(buf), "L%d.attn_bias", layer);
            return buf;
        case Kind::MlpLayer:
            std::snprintf(buf, sizeof(buf), "L%d.mlp", layer);
            return buf;
        case Kind::MlpBias:
            std::snprintf(buf, sizeof(buf), "L%d.mlp_bias", layer);
            return buf;
        case Kind::Neuron:
            std::snprintf(buf, sizeof(buf), "L%dN%d", layer, index);
            return buf;
    }
    return "?";
}

ComponentId ComponentId::parse(const std::string& text) {
    if (text == "embed") return embed();
    int layer = -1;
    int index = -1;
    char tail[16] = {0};
    if (std::sscanf(text.c_str(), "L%dH%d", &layer, &index) == 2) return head(layer, index);
    if (std::sscanf(text.c_str(), "L%dN%d", &layer, &index) == 2) return neuron(layer, index);
    if (std::sscanf(text.c_str(), "L%d.%15s", &layer, tail) == 2) {
        std::string t = tail;
        if (t == "attn_bias") return attn_bias(layer);
        if (t == "mlp") return mlp_layer(layer);
        if (t == "mlp_bias") return mlp_bias(layer);
    }
    throw ConfigError("cannot parse component name: " + text);
}

bool operator<(const ComponentId& a, const ComponentId& b) {
    const bool a_embed = a.kind == ComponentId::Kind::Embed;
    const bool b_embed = b.kind == ComponentId::Kind::Embed;
    if (a_embed != b_embed) return a_embed;
    return std::tuple(a.layer, class_rank(a.kind), a.index) <
           std::tuple(b.layer, class_rank(b.kind), b.index);
}

} // namespace selfrepair
