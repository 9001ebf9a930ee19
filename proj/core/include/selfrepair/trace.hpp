#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "selfrepair/component.hpp"
#include "selfrepair/model.hpp"

namespace selfrepair {

/// How a trace was produced, recorded so downstream metrics can validate their
/// preconditions (e.g. the two-term norm identity requires freeze_downstream).
struct InterventionStamp {
    ComponentId target;
    std::string mode;             // "zero" | "mean" | "resample" | "reinject"
    bool freeze_downstream = false;
    bool freeze_final_scale = false;
    double reinject_alpha = 0.0;
};

/// Everything one forward pass records, per position k:
///   - the residual stream entering each layer and the final pre-norm residual r_k
///   - every component output: embedding, per-head outputs, attention output
///     bias, MLP layer outputs, and per-neuron scalar activations
///   - the final-norm scale factor S_k, raw logits, and centered logits.
/// The residual reconstructs as the embedding plus the sum of all layer-level
/// component outputs (plus any reinjected vectors, tracked separately).
/// Traces are immutable once returned and safe to share read-only.
struct ForwardTrace {
    ModelConfig config;
    std::vector<std::int32_t> tokens;
    int seq_len = 0;

    std::vector<float> layer_input;  // [n_layers][seq][d_model]
    std::vector<float> embed_out;    // [seq][d_model]
    std::vector<float> head_out;     // [n_layers][n_heads][seq][d_model]
    std::vector<float> attn_bias;    // [n_layers][d_model] (constant per position)
    std::vector<float> mlp_out;      // [n_layers][seq][d_model]
    std::vector<float> mlp_bias;     // [n_layers][d_model]
    std::vector<float> neuron_act;   // [n_layers][seq][d_mlp]
    std::vector<float> residual;     // [seq][d_model] final pre-norm residual r_k
    std::vector<float> final_scale;  // [seq] S_k > 0
    std::vector<float> logits;       // [seq][vocab]
    std::vector<float> centered_logits; // [seq][vocab]
    std::vector<float> injected;     // [seq][d_model]; empty unless a reinjection ran

    std::optional<InterventionStamp> stamp;
    /// Layer whose MLP output was replaced wholesale by an intervention; its
    /// recorded neuron activations are zero and do not sub-decompose it.
    int replaced_mlp_layer = -1;

    std::span<const float> layer_input_at(int layer, int pos) const;
    std::span<const float> embed_at(int pos) const;
    std::span<const float> head_at(int layer, int head, int pos) const;
    std::span<const float> attn_bias_at(int layer) const;
    std::span<const float> mlp_at(int layer, int pos) const;
    std::span<const float> mlp_bias_at(int layer) const;
    std::span<const float> neuron_act_at(int layer, int pos) const;
    std::span<const float> residual_at(int pos) const;
    std::span<const float> logits_at(int pos) const;
    std::span<const float> centered_logits_at(int pos) const;
    std::span<const float> injected_at(int pos) const;
    float scale_at(int pos) const;

    /// Number of positions with a known correct next token (seq_len - 1).
    int scoring_positions() const { return seq_len - 1; }

    /// Correct next token at a scoring position. Throws ContractError for the
    /// final position, which has none.
    int next_token(int pos) const;
};

/// Max over positions of |r_k - (embed + sum of layer-level component outputs
/// + injected)| in the infinity norm. Applies to clean and intervened traces
/// alike.
double residual_reconstruction_check(const ForwardTrace& trace);

} // namespace selfrepair
