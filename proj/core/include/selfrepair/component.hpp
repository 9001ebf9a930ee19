#pragma once

#include <cstdint>
#include <string>

#include "selfrepair/config.hpp"

namespace selfrepair {

/// Addressable unit of the residual-stream decomposition. Every component adds
/// its output into the residual stream: the embedding, each attention head,
/// the attention output bias of a layer, each MLP layer, the MLP output bias,
/// and single neurons. Neuron and MlpBias sub-decompose MlpLayer; Head and
/// AttnBias sub-decompose an attention layer. A decomposition sum uses either
/// a layer component or its sub-parts, never both.
struct ComponentId {
    enum class Kind : std::uint8_t { Embed, Head, AttnBias, MlpLayer, MlpBias, Neuron };

    Kind kind = Kind::Embed;
    std::int32_t layer = -1;
    std::int32_t index = -1; // head index or neuron index

    static ComponentId embed() { return {Kind::Embed, -1, -1}; }
    static ComponentId head(int layer, int index) { return {Kind::Head, layer, index}; }
    static ComponentId attn_bias(int layer) { return {Kind::AttnBias, layer, -1}; }
    static ComponentId mlp_layer(int layer) { return {Kind::MlpLayer, layer, -1}; }
    static ComponentId mlp_bias(int layer) { return {Kind::MlpBias, layer, -1}; }
    static ComponentId neuron(int layer, int index) { return {Kind::Neuron, layer, index}; }

    /// Throws ContractError if indices are out of bounds for the config.
    void validate(const ModelConfig& config) const;

    /// Stable text form used in result tables: "embed", "L2H7", "L2.attn_bias",
    /// "L2.mlp", "L2.mlp_bias", "L2N130".
    std::string str() const;

    /// Parses the text form produced by str(). Throws ConfigError on bad input.
    static ComponentId parse(const std::string& text);

    bool operator==(const ComponentId&) const = default;
};

/// Canonical table order: embed first, then per layer heads 0..H-1, the
/// attention bias, the MLP layer, the MLP bias, then neurons by index.
bool operator<(const ComponentId& a, const ComponentId& b);

} // namespace selfrepair
