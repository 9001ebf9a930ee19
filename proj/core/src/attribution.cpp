#include "selfrepair/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "detail.hpp"
#include "selfrepair/errors.hpp"

namespace selfrepair {

double FoldedReadout::contribution(std::span<const float> v) const {
    if (v.size() != effective_readout.size())
        throw ContractError("readout applied to a vector of the wrong width");
    return detail::dot_df(effective_readout.data(), v.data(),
                          static_cast<int>(effective_readout.size())) /
           static_cast<double>(scale);
}

std::vector<float> center_logits(std::span<const float> logits) {
    const double mean = detail::sum_d(logits.data(), static_cast<int>(logits.size())) /
                        static_cast<double>(logits.size());
    std::vector<float> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        out[i] = static_cast<float>(logits[i] - mean);
    return out;
}

FoldedReadout fold_readout(const Model& model, const ForwardTrace& trace, int position,
                           int target_token) {
    const ModelConfig& c = model.config();
    if (position < 0 || position >= trace.seq_len)
        throw ContractError("fold_readout: position out of range");
    if (target_token < 0 || target_token >= c.vocab_size)
        throw ContractError("fold_readout: target token out of range");

    const int dm = c.d_model;
    const auto& gain = model.weights().final_norm_gain;
    const auto target_row = model.unembed_row(target_token);
    const auto mean_row = model.mean_unembed_row();

    FoldedReadout r;
    r.position = position;
    r.target_token = target_token;
    r.scale = trace.scale_at(position);
    r.effective_readout.resize(static_cast<std::size_t>(dm));

    // Centered row through the folded gain: (W_U[t] - mean_v W_U[v]) * gain.
    for (int d = 0; d < dm; ++d)
        r.effective_readout[static_cast<std::size_t>(d)] =
            (static_cast<double>(target_row[static_cast<std::size_t>(d)]) -
             mean_row[static_cast<std::size_t>(d)]) *
            static_cast<double>(gain[static_cast<std::size_t>(d)]);

    if (c.norm_kind == NormKind::LayerNorm) {
        // Mean-subtraction folded as a projection: subtracting the row mean
        // from the readout makes each component's share exact.
        double mean = 0.0;
        for (double v : r.effective_readout) mean += v;
        mean /= dm;
        for (double& v : r.effective_readout) v -= mean;
        // Final-norm bias share (not scaled by S), centered over the vocab.
        const auto& fnb = model.weights().final_norm_bias;
        double bias_share = 0.0;
        for (int d = 0; d < dm; ++d)
            bias_share += (static_cast<double>(target_row[static_cast<std::size_t>(d)]) -
                           mean_row[static_cast<std::size_t>(d)]) *
                          static_cast<double>(fnb[static_cast<std::size_t>(d)]);
        r.decomposition_bias = bias_share;
    }
    if (!model.weights().unembed_b.empty())
        r.decomposition_bias += static_cast<double>(model.weights().unembed_b[static_cast<std::size_t>(
                                    target_token)]) -
                                model.mean_unembed_bias();
    return r;
}

FoldedReadout fold_readout(const Model& model, const ForwardTrace& trace, int position) {
    return fold_readout(model, trace, position, trace.next_token(position));
}

double direct_effect(const Model& model, const ForwardTrace& trace, const FoldedReadout& readout,
                     const ComponentId& component) {
    component.validate(model.config());
    const int pos = readout.position;
    switch (component.kind) {
        case ComponentId::Kind::Embed:
            return readout.contribution(trace.embed_at(pos));
        case ComponentId::Kind::Head:
            return readout.contribution(trace.head_at(component.layer, component.index, pos));
        case ComponentId::Kind::AttnBias:
            return readout.contribution(trace.attn_bias_at(component.layer));
        case ComponentId::Kind::MlpLayer:
            return readout.contribution(trace.mlp_at(component.layer, pos));
        case ComponentId::Kind::MlpBias:
            return readout.contribution(trace.mlp_bias_at(component.layer));
        case ComponentId::Kind::Neuron: {
            const auto act = trace.neuron_act_at(component.layer, pos);
            const auto& wout = model.weights().layers[static_cast<std::size_t>(component.layer)].wout;
            const int dm = model.config().d_model;
            const double along = detail::dot_df(
                readout.effective_readout.data(),
                &wout[static_cast<std::size_t>(component.index) * static_cast<std::size_t>(dm)], dm);
            return static_cast<double>(act[static_cast<std::size_t>(component.index)]) * along /
                   static_cast<double>(readout.scale);
        }
    }
    throw ContractError("component has unknown kind");
}

double direct_effect(const Model& model, const ForwardTrace& trace, const ComponentId& component,
                     int position) {
    const FoldedReadout readout = fold_readout(model, trace, position);
    return direct_effect(model, trace, readout, component);
}

double DirectEffectTable::sum() const {
    double s = 0.0;
    for (const auto& [id, de] : effects) s += de;
    return s;
}

double DirectEffectTable::closure_residual() const {
    return sum() + injected_effect + decomposition_bias - centered_correct_logit;
}

DirectEffectTable direct_effect_all(const Model& model, const ForwardTrace& trace, int position) {
    const FoldedReadout readout = fold_readout(model, trace, position);
    const ModelConfig& c = model.config();

    DirectEffectTable table;
    table.position = position;
    table.target_token = readout.target_token;
    table.decomposition_bias = readout.decomposition_bias;
    if (!trace.injected.empty())
        table.injected_effect = readout.contribution(trace.injected_at(position));
    table.centered_correct_logit = static_cast<double>(
        trace.centered_logits_at(position)[static_cast<std::size_t>(readout.target_token)]);

    table.effects.reserve(static_cast<std::size_t>(c.n_layers) * (c.n_heads + 2) + 1);
    table.effects.emplace_back(ComponentId::embed(),
                               direct_effect(model, trace, readout, ComponentId::embed()));
    for (int l = 0; l < c.n_layers; ++l) {
        for (int h = 0; h < c.n_heads; ++h) {
            const auto id = ComponentId::head(l, h);
            table.effects.emplace_back(id, direct_effect(model, trace, readout, id));
        }
        const auto bias_id = ComponentId::attn_bias(l);
        table.effects.emplace_back(bias_id, direct_effect(model, trace, readout, bias_id));
        const auto mlp_id = ComponentId::mlp_layer(l);
        table.effects.emplace_back(mlp_id, direct_effect(model, trace, readout, mlp_id));
    }
    return table;
}

std::vector<double> neuron_direct_effects(const Model& model, const ForwardTrace& trace,
                                          const FoldedReadout& readout, int layer) {
    const ModelConfig& c = model.config();
    if (layer < 0 || layer >= c.n_layers)
        throw ContractError("neuron_direct_effects: layer out of range");
    const auto act = trace.neuron_act_at(layer, readout.position);
    const auto& wout = model.weights().layers[static_cast<std::size_t>(layer)].wout;
    const int dm = c.d_model;

    std::vector<double> out(static_cast<std::size_t>(c.d_mlp));
    for (int j = 0; j < c.d_mlp; ++j) {
        const double along =
            detail::dot_df(readout.effective_readout.data(),
                           &wout[static_cast<std::size_t>(j) * static_cast<std::size_t>(dm)], dm);
        out[static_cast<std::size_t>(j)] =
            static_cast<double>(act[static_cast<std::size_t>(j)]) * along /
            static_cast<double>(readout.scale);
    }
    return out;
}

std::vector<double> neuron_direct_effects(const Model& model, const ForwardTrace& trace, int layer,
                                          int position) {
    const FoldedReadout readout = fold_readout(model, trace, position);
    return neuron_direct_effects(model, trace, readout, layer);
}

} // namespace selfrepair
