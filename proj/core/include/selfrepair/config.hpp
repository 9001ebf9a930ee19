#pragma once

#include <string>

#include "selfrepair/errors.hpp"

namespace selfrepair {

enum class NormKind { LayerNorm, RmsNorm };
enum class PositionalKind { AbsoluteLearned, Rotary, None };
enum class ActivationKind { Gelu, Relu };

std::string to_string(NormKind kind);
std::string to_string(PositionalKind kind);
std::string to_string(ActivationKind kind);
NormKind norm_kind_from_string(const std::string& s);
PositionalKind positional_kind_from_string(const std::string& s);
ActivationKind activation_kind_from_string(const std::string& s);

/// Architecture of a decoder-only transformer. `parallel_attention` selects
/// Pythia-style blocks where attention and MLP read the same residual input;
/// otherwise blocks are sequential (GPT-2 style). The attention output
/// projection always maps n_heads*d_head -> d_model, so d_head * n_heads need
/// not equal d_model.
struct ModelConfig {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0;
    int d_mlp = 0;
    int vocab_size = 0;
    int max_seq = 0;
    bool parallel_attention = false;
    NormKind norm_kind = NormKind::LayerNorm;
    PositionalKind positional_kind = PositionalKind::AbsoluteLearned;
    ActivationKind activation_kind = ActivationKind::Gelu;

    /// Throws ConfigError if any count is non-positive or rotary is requested
    /// with an odd d_head.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

} // namespace selfrepair
