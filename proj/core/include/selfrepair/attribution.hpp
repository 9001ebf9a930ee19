#pragma once

#include <span>
#include <utility>
#include <vector>

#include "selfrepair/model.hpp"
#include "selfrepair/trace.hpp"

namespace selfrepair {

/// Readout of a target token's centered logit, with the final normalization
/// folded and the scale frozen at the trace's clean S_k. For any vector v,
/// contribution(v) is v's exact share of the centered target logit:
///
///   centered_logit[target] = contribution(r_k) + decomposition_bias
///
/// The unembedding row is centered against the vocabulary mean and, for
/// LayerNorm, the mean-subtraction is folded into the readout as a projection,
/// so per-component shares are exact rather than linearized.
struct FoldedReadout {
    std::vector<double> effective_readout; // u_t, length d_model
    double decomposition_bias = 0.0;       // final-norm/unembed bias share, centered
    float scale = 1.0f;                    // clean S_k frozen into this readout
    int position = 0;
    int target_token = 0;

    /// u_t . (v / S_k); zero vector -> 0 (bias excluded).
    double contribution(std::span<const float> v) const;
};

/// Subtracts the vocabulary mean: softmax is unchanged and uniform logit
/// translations vanish. Idempotent.
std::vector<float> center_logits(std::span<const float> logits);

/// Builds the folded readout for the correct next token at `position` (or an
/// explicit target token). The scale is the trace's own S_k, honoring the
/// convention that direct effects are measured at the clean scale.
FoldedReadout fold_readout(const Model& model, const ForwardTrace& trace, int position,
                           int target_token);
FoldedReadout fold_readout(const Model& model, const ForwardTrace& trace, int position);

/// Direct effect of one component on the centered correct-next-token logit at
/// `position`: the component output through the folded readout at clean scale.
/// Linear in the component output. Throws ContractError at the final position
/// (no next token).
double direct_effect(const Model& model, const ForwardTrace& trace, const ComponentId& component,
                     int position);

/// As direct_effect but reusing a prebuilt readout (the readout's position
/// must match).
double direct_effect(const Model& model, const ForwardTrace& trace, const FoldedReadout& readout,
                     const ComponentId& component);

/// Layer-granularity direct effects of every component at one position. The
/// rows sum with decomposition_bias (plus, for reinjected traces, the injected
/// vector's share) to the centered correct logit.
struct DirectEffectTable {
    int position = 0;
    int target_token = 0;
    std::vector<std::pair<ComponentId, double>> effects; // canonical component order
    double decomposition_bias = 0.0;
    double injected_effect = 0.0; // share of any reinjected vectors; 0 otherwise
    double centered_correct_logit = 0.0;

    double sum() const;
    // sum() + injected_effect + decomposition_bias - centered_correct_logit
    double closure_residual() const;
};

DirectEffectTable direct_effect_all(const Model& model, const ForwardTrace& trace, int position);

/// Per-neuron direct effects of one MLP layer at one position; element j is
/// the direct effect of Neuron{layer, j}. Together with the MLP bias effect
/// they sum to the MLP layer's direct effect.
std::vector<double> neuron_direct_effects(const Model& model, const ForwardTrace& trace, int layer,
                                          int position);
std::vector<double> neuron_direct_effects(const Model& model, const ForwardTrace& trace,
                                          const FoldedReadout& readout, int layer);

} // namespace selfrepair
