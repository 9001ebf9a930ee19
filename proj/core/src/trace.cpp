#include "selfrepair/trace.hpp"

#include <cmath>

#include "selfrepair/errors.hpp"

namespace selfrepair {

namespace {

std::span<const float> row(const std::vector<float>& v, std::size_t index, std::size_t width) {
    return {v.data() + index * width, width};
}

} // namespace

std::span<const float> ForwardTrace::layer_input_at(int layer, int pos) const {
    const auto udm = static_cast<std::size_t>(config.d_model);
    return row(layer_input, static_cast<std::size_t>(layer) * seq_len + pos, udm);
}

std::span<const float> ForwardTrace::embed_at(int pos) const {
    return row(embed_out, static_cast<std::size_t>(pos), static_cast<std::size_t>(config.d_model));
}

std::span<const float> ForwardTrace::head_at(int layer, int head, int pos) const {
    const auto udm = static_cast<std::size_t>(config.d_model);
    const std::size_t idx =
        (static_cast<std::size_t>(layer) * config.n_heads + head) * seq_len + pos;
    return row(head_out, idx, udm);
}

std::span<const float> ForwardTrace::attn_bias_at(int layer) const {
    return row(attn_bias, static_cast<std::size_t>(layer), static_cast<std::size_t>(config.d_model));
}

std::span<const float> ForwardTrace::mlp_at(int layer, int pos) const {
    const auto udm = static_cast<std::size_t>(config.d_model);
    return row(mlp_out, static_cast<std::size_t>(layer) * seq_len + pos, udm);
}

std::span<const float> ForwardTrace::mlp_bias_at(int layer) const {
    return row(mlp_bias, static_cast<std::size_t>(layer), static_cast<std::size_t>(config.d_model));
}

std::span<const float> ForwardTrace::neuron_act_at(int layer, int pos) const {
    const auto width = static_cast<std::size_t>(config.d_mlp);
    return row(neuron_act, static_cast<std::size_t>(layer) * seq_len + pos, width);
}

std::span<const float> ForwardTrace::residual_at(int pos) const {
    return row(residual, static_cast<std::size_t>(pos), static_cast<std::size_t>(config.d_model));
}

std::span<const float> ForwardTrace::logits_at(int pos) const {
    return row(logits, static_cast<std::size_t>(pos), static_cast<std::size_t>(config.vocab_size));
}

std::span<const float> ForwardTrace::centered_logits_at(int pos) const {
    return row(centered_logits, static_cast<std::size_t>(pos),
               static_cast<std::size_t>(config.vocab_size));
}

std::span<const float> ForwardTrace::injected_at(int pos) const {
    return row(injected, static_cast<std::size_t>(pos), static_cast<std::size_t>(config.d_model));
}

float ForwardTrace::scale_at(int pos) const { return final_scale[static_cast<std::size_t>(pos)]; }

int ForwardTrace::next_token(int pos) const {
    if (pos < 0 || pos >= seq_len - 1)
        throw ContractError("position " + std::to_string(pos) + " has no correct next token");
    return tokens[static_cast<std::size_t>(pos) + 1];
}

double residual_reconstruction_check(const ForwardTrace& trace) {
    const int dm = trace.config.d_model;
    const int H = trace.config.n_heads;
    std::vector<double> sum(static_cast<std::size_t>(dm));
    double worst = 0.0;
    for (int k = 0; k < trace.seq_len; ++k) {
        const auto embed = trace.embed_at(k);
        for (int d = 0; d < dm; ++d) sum[static_cast<std::size_t>(d)] = embed[static_cast<std::size_t>(d)];
        for (int l = 0; l < trace.config.n_layers; ++l) {
            for (int h = 0; h < H; ++h) {
                const auto out = trace.head_at(l, h, k);
                for (int d = 0; d < dm; ++d) sum[static_cast<std::size_t>(d)] += out[static_cast<std::size_t>(d)];
            }
            const auto bias = trace.attn_bias_at(l);
            const auto mlp = trace.mlp_at(l, k);
            for (int d = 0; d < dm; ++d) {
                sum[static_cast<std::size_t>(d)] += bias[static_cast<std::size_t>(d)];
                sum[static_cast<std::size_t>(d)] += mlp[static_cast<std::size_t>(d)];
            }
        }
        if (!trace.injected.empty()) {
            const auto inj = trace.injected_at(k);
            for (int d = 0; d < dm; ++d) sum[static_cast<std::size_t>(d)] += inj[static_cast<std::size_t>(d)];
        }
        const auto r = trace.residual_at(k);
        for (int d = 0; d < dm; ++d) {
            const double diff = std::abs(sum[static_cast<std::size_t>(d)] -
                                         static_cast<double>(r[static_cast<std::size_t>(d)]));
            worst = std::max(worst, diff);
        }
    }
    return worst;
}

} // namespace selfrepair
