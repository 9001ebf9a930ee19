#include "selfrepair/forward.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "detail.hpp"
#include "forward_internal.hpp"
#include "selfrepair/errors.hpp"

namespace selfrepair {
namespace internal {

namespace {

// Position-block width: inner loops tile over positions so weight rows stay
// cache-resident. Tiling only reorders loops across positions; each position's
// accumulation order is fixed, so results do not depend on the block width.
constexpr int kBlock = 16;

// Tanh-form gelu written through the logistic function:
// 0.5*x*(1 + tanh(u)) == x / (1 + exp(-2u)).
inline float gelu(float x) {
    const float k = 0.7978845608028654f; // sqrt(2/pi)
    const float inner = k * (x + 0.044715f * x * x * x);
    return x / (1.0f + std::exp(-2.0f * inner));
}

inline float activation(ActivationKind kind, float x) {
    return kind == ActivationKind::Gelu ? gelu(x) : (x > 0.0f ? x : 0.0f);
}

// NeoX-style rotary: pairs (c, c + d_head/2) rotated by pos-dependent angles.
void apply_rotary(float* row, int n_heads, int d_head, int pos, const float* inv_freq) {
    const int half = d_head / 2;
    for (int h = 0; h < n_heads; ++h) {
        float* head = row + h * d_head;
        for (int c = 0; c < half; ++c) {
            const float theta = static_cast<float>(pos) * inv_freq[c];
            const float cs = std::cos(theta);
            const float sn = std::sin(theta);
            const float a = head[c];
            const float b = head[c + half];
            head[c] = a * cs - b * sn;
            head[c + half] = a * sn + b * cs;
        }
    }
}

struct NormParams {
    const float* gain;
    const float* bias; // null for RMSNorm
};

// Intermediate norms: the scale is local, only the final norm's is recorded.
void apply_norm(NormKind kind, const NormParams& p, const float* x, float* out, int n) {
    if (kind == NormKind::LayerNorm) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += x[i];
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = x[i] - mean;
            var += d * d;
        }
        var /= n;
        const float mu = static_cast<float>(mean);
        const float inv = 1.0f / std::sqrt(static_cast<float>(var) + kNormEps);
        for (int i = 0; i < n; ++i)
            out[i] = p.gain[i] * ((x[i] - mu) * inv) + (p.bias ? p.bias[i] : 0.0f);
    } else {
        double ms = 0.0;
        for (int i = 0; i < n; ++i) ms += static_cast<double>(x[i]) * x[i];
        ms /= n;
        const float inv = 1.0f / std::sqrt(static_cast<float>(ms) + kNormEps);
        for (int i = 0; i < n; ++i) out[i] = p.gain[i] * (x[i] * inv);
    }
}

float final_scale_of(NormKind kind, const float* x, int n) {
    if (kind == NormKind::LayerNorm) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += x[i];
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = x[i] - mean;
            var += d * d;
        }
        var /= n;
        return std::sqrt(static_cast<float>(var) + kNormEps);
    }
    double ms = 0.0;
    for (int i = 0; i < n; ++i) ms += static_cast<double>(x[i]) * x[i];
    ms /= n;
    return std::sqrt(static_cast<float>(ms) + kNormEps);
}

// out[k] = W x[k] for rows of W, tiled over positions.
void project_block(const float* weight_rows, int n_rows, const float* in, int in_stride,
                   float* out, int out_stride, int kb, int ke, int dm) {
    for (int o = 0; o < n_rows; ++o) {
        const float* row = weight_rows + static_cast<std::size_t>(o) * dm;
        for (int k = kb; k < ke; ++k)
            out[static_cast<std::size_t>(k) * out_stride + o] =
                detail::dot_f(row, in + static_cast<std::size_t>(k) * in_stride, dm);
    }
}

} // namespace

ForwardTrace run_forward(const Model& model, const TokenSequence& tokens,
                         const InterventionPlan* plan, ForwardTrace&& recycle) {
    model.validate_tokens(tokens);
    const ModelConfig& c = model.config();
    const ModelWeights& w = model.weights();
    const int seq = tokens.length();
    const int dm = c.d_model;
    const int H = c.n_heads;
    const int dh = c.d_head;
    const int hd = H * dh;
    const int dmlp = c.d_mlp;
    const int V = c.vocab_size;
    const int L = c.n_layers;
    const auto udm = static_cast<std::size_t>(dm);

    const ForwardTrace* clean = plan ? plan->clean : nullptr;
    if (plan && plan->freeze_downstream && !clean)
        throw ContractError("freeze_downstream requires a clean trace");
    if (plan && plan->freeze_final_scale && !clean)
        throw ContractError("freeze_final_scale requires a clean trace");
    if (clean && (clean->seq_len != seq || clean->tokens != tokens.ids))
        throw ContractError("clean trace does not match the intervened tokens");

    // Recycled buffers are resized to the same shapes and fully rewritten.
    ForwardTrace t = std::move(recycle);
    t.config = c;
    t.tokens = tokens.ids;
    t.seq_len = seq;
    t.stamp.reset();
    t.replaced_mlp_layer = -1;
    t.injected.clear();
    t.layer_input.resize(static_cast<std::size_t>(L) * seq * udm);
    t.embed_out.resize(static_cast<std::size_t>(seq) * udm);
    t.head_out.resize(static_cast<std::size_t>(L) * H * seq * udm);
    t.attn_bias.resize(static_cast<std::size_t>(L) * udm);
    t.mlp_out.resize(static_cast<std::size_t>(L) * seq * udm);
    t.mlp_bias.resize(static_cast<std::size_t>(L) * udm);
    t.neuron_act.resize(static_cast<std::size_t>(L) * seq * static_cast<std::size_t>(dmlp));
    t.residual.resize(static_cast<std::size_t>(seq) * udm);
    t.final_scale.resize(static_cast<std::size_t>(seq));
    t.logits.resize(static_cast<std::size_t>(seq) * V);
    t.centered_logits.resize(static_cast<std::size_t>(seq) * V);
    for (int l = 0; l < L; ++l) {
        std::memcpy(&t.attn_bias[static_cast<std::size_t>(l) * udm], w.layers[l].bo.data(),
                    udm * sizeof(float));
        std::memcpy(&t.mlp_bias[static_cast<std::size_t>(l) * udm], w.layers[l].bout.data(),
                    udm * sizeof(float));
    }
    if (plan && plan->has_stamp) t.stamp = plan->stamp;
    if (plan && plan->target_kind == InterventionPlan::TargetKind::Mlp)
        t.replaced_mlp_layer = plan->target_layer;
    if (plan && plan->inject) t.injected = *plan->inject;

    // Embedding component: token row plus, for absolute-learned positions, the
    // position row.
    for (int k = 0; k < seq; ++k) {
        float* row = &t.embed_out[static_cast<std::size_t>(k) * udm];
        std::memcpy(row, model.embed_row(tokens.ids[static_cast<std::size_t>(k)]).data(),
                    udm * sizeof(float));
        if (c.positional_kind == PositionalKind::AbsoluteLearned) {
            const float* pos = &w.embed_pos[static_cast<std::size_t>(k) * udm];
            for (int d = 0; d < dm; ++d) row[d] += pos[d];
        }
    }

    // Resume after the last layer whose inputs are untouched by the plan.
    int start_layer = 0;
    if (plan && clean) {
        int first_changed = L;
        if (plan->target_kind != InterventionPlan::TargetKind::None)
            first_changed = plan->target_layer;
        if (plan->inject_layer >= 0 && plan->inject_layer < first_changed)
            first_changed = plan->inject_layer;
        start_layer = first_changed == L ? 0 : first_changed;
    }
    if (start_layer > 0) {
        const std::size_t rows = static_cast<std::size_t>(start_layer) * seq * udm;
        std::memcpy(t.layer_input.data(), clean->layer_input.data(), rows * sizeof(float));
        std::memcpy(t.head_out.data(), clean->head_out.data(),
                    static_cast<std::size_t>(start_layer) * H * seq * udm * sizeof(float));
        std::memcpy(t.mlp_out.data(), clean->mlp_out.data(), rows * sizeof(float));
        std::memcpy(t.neuron_act.data(), clean->neuron_act.data(),
                    static_cast<std::size_t>(start_layer) * seq * dmlp * sizeof(float));
    }

    // Residual stream, updated in place layer by layer.
    std::vector<float> x(static_cast<std::size_t>(seq) * udm);
    if (start_layer == 0) {
        std::memcpy(x.data(), t.embed_out.data(), x.size() * sizeof(float));
    } else {
        std::memcpy(x.data(),
                    &clean->layer_input[static_cast<std::size_t>(start_layer) * seq * udm],
                    x.size() * sizeof(float));
    }

    // Scratch buffers reused across layers.
    std::vector<float> xn(static_cast<std::size_t>(seq) * udm);
    std::vector<float> qbuf(static_cast<std::size_t>(seq) * hd);
    std::vector<float> kbuf(static_cast<std::size_t>(seq) * hd);
    std::vector<float> vbuf(static_cast<std::size_t>(seq) * hd);
    std::vector<float> zbuf(static_cast<std::size_t>(seq) * dh);
    std::vector<float> scores(static_cast<std::size_t>(seq));
    std::vector<float> attn_sum(static_cast<std::size_t>(seq) * udm);
    std::vector<float> preblk(static_cast<std::size_t>(kBlock) * dmlp);
    std::vector<float> normed(static_cast<std::size_t>(seq) * udm);
    std::vector<float> inv_freq;
    if (c.positional_kind == PositionalKind::Rotary) {
        inv_freq.resize(static_cast<std::size_t>(dh / 2));
        for (int i = 0; i < dh / 2; ++i)
            inv_freq[static_cast<std::size_t>(i)] =
                std::pow(10000.0f, -2.0f * static_cast<float>(i) / static_cast<float>(dh));
    }
    const float attn_scale = 1.0f / std::sqrt(static_cast<float>(dh));

    for (int l = start_layer; l < L; ++l) {
        const LayerWeights& lw = w.layers[static_cast<std::size_t>(l)];
        float* head_base = &t.head_out[(static_cast<std::size_t>(l) * H) * seq * udm];
        float* mlp_base = &t.mlp_out[static_cast<std::size_t>(l) * seq * udm];
        float* act_base = &t.neuron_act[static_cast<std::size_t>(l) * seq * dmlp];

        const bool is_target_layer = plan &&
                                     plan->target_kind != InterventionPlan::TargetKind::None &&
                                     l == plan->target_layer;
        const bool target_is_head =
            is_target_layer && plan->target_kind == InterventionPlan::TargetKind::Head;
        const bool target_is_mlp =
            is_target_layer && plan->target_kind == InterventionPlan::TargetKind::Mlp;
        const bool after_target = plan &&
                                  plan->target_kind != InterventionPlan::TargetKind::None &&
                                  l > plan->target_layer;
        const bool frozen_layer = plan && plan->freeze_downstream && after_target;
        const bool inject_here = plan && plan->inject_layer == l;
        // At the resumed target layer the residual entering this layer is
        // bit-identical to clean, so untouched sibling outputs can be copied
        // instead of recomputed.
        const bool inputs_clean = clean != nullptr && l == start_layer && !inject_here;

        if (inject_here && plan->inject) {
            const float* add = plan->inject->data();
            for (std::size_t i = 0; i < x.size(); ++i) x[i] += add[i];
        }
        std::memcpy(&t.layer_input[static_cast<std::size_t>(l) * seq * udm], x.data(),
                    x.size() * sizeof(float));

        // ---- attention ----
        if (frozen_layer || (inputs_clean && (target_is_head || target_is_mlp))) {
            // Outputs patched or known bit-equal: copy instead of recomputing.
            std::memcpy(head_base,
                        &clean->head_out[(static_cast<std::size_t>(l) * H) * seq * udm],
                        static_cast<std::size_t>(H) * seq * udm * sizeof(float));
        } else {
            for (int k = 0; k < seq; ++k)
                apply_norm(c.norm_kind, {lw.norm1_gain.data(),
                                         lw.norm1_bias.empty() ? nullptr : lw.norm1_bias.data()},
                           &x[static_cast<std::size_t>(k) * udm],
                           &xn[static_cast<std::size_t>(k) * udm], dm);
            for (int kb = 0; kb < seq; kb += kBlock) {
                const int ke = std::min(seq, kb + kBlock);
                project_block(lw.wq.data(), hd, xn.data(), dm, qbuf.data(), hd, kb, ke, dm);
                project_block(lw.wk.data(), hd, xn.data(), dm, kbuf.data(), hd, kb, ke, dm);
                project_block(lw.wv.data(), hd, xn.data(), dm, vbuf.data(), hd, kb, ke, dm);
            }
            if (c.positional_kind == PositionalKind::Rotary) {
                for (int k = 0; k < seq; ++k) {
                    apply_rotary(&qbuf[static_cast<std::size_t>(k) * hd], H, dh, k,
                                 inv_freq.data());
                    apply_rotary(&kbuf[static_cast<std::size_t>(k) * hd], H, dh, k,
                                 inv_freq.data());
                }
            }
            for (int h = 0; h < H; ++h) {
                float* head_rows = head_base + static_cast<std::size_t>(h) * seq * udm;
                // Causal attention-weighted values for every position.
                for (int k = 0; k < seq; ++k) {
                    const float* qh = &qbuf[static_cast<std::size_t>(k) * hd + h * dh];
                    float max_score = -std::numeric_limits<float>::infinity();
                    for (int j = 0; j <= k; ++j) {
                        scores[static_cast<std::size_t>(j)] =
                            detail::dot_f(qh, &kbuf[static_cast<std::size_t>(j) * hd + h * dh],
                                          dh) *
                            attn_scale;
                        max_score = std::max(max_score, scores[static_cast<std::size_t>(j)]);
                    }
                    float denom = 0.0f;
                    for (int j = 0; j <= k; ++j) {
                        const float e = std::exp(scores[static_cast<std::size_t>(j)] - max_score);
                        scores[static_cast<std::size_t>(j)] = e;
                        denom += e;
                    }
                    const float inv_denom = 1.0f / denom;
                    float* z = &zbuf[static_cast<std::size_t>(k) * dh];
                    std::memset(z, 0, static_cast<std::size_t>(dh) * sizeof(float));
                    for (int j = 0; j <= k; ++j)
                        detail::axpy_f(z, scores[static_cast<std::size_t>(j)] * inv_denom,
                                       &vbuf[static_cast<std::size_t>(j) * hd + h * dh], dh);
                }
                // Head output through this head's block of the output
                // projection.
                std::memset(head_rows, 0, static_cast<std::size_t>(seq) * udm * sizeof(float));
                for (int kb = 0; kb < seq; kb += kBlock) {
                    const int ke = std::min(seq, kb + kBlock);
                    for (int cdim = 0; cdim < dh; ++cdim) {
                        const float* wo_row =
                            &lw.wo[static_cast<std::size_t>(h * dh + cdim) * udm];
                        for (int k = kb; k < ke; ++k)
                            detail::axpy_f(head_rows + static_cast<std::size_t>(k) * udm,
                                           zbuf[static_cast<std::size_t>(k) * dh + cdim], wo_row,
                                           dm);
                    }
                }
            }
        }
        if (target_is_head && plan->replacement) {
            std::memcpy(head_base + static_cast<std::size_t>(plan->target_head) * seq * udm,
                        plan->replacement->data(),
                        static_cast<std::size_t>(seq) * udm * sizeof(float));
        }

        // Heads in index order plus the output bias, so the layer output stays
        // the exact sum of its sub-components.
        for (int k = 0; k < seq; ++k) {
            float* sum = &attn_sum[static_cast<std::size_t>(k) * udm];
            std::memset(sum, 0, udm * sizeof(float));
            for (int h = 0; h < H; ++h) {
                const float* out = head_base + (static_cast<std::size_t>(h) * seq +
                                                static_cast<std::size_t>(k)) *
                                                   udm;
                for (int d = 0; d < dm; ++d) sum[d] += out[d];
            }
            for (int d = 0; d < dm; ++d) sum[d] += lw.bo[static_cast<std::size_t>(d)];
        }

        // ---- MLP ----
        // Parallel blocks read the pre-attention residual; sequential blocks
        // read it after the attention update.
        if (!c.parallel_attention)
            for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn_sum[i];

        if (target_is_mlp && plan->replacement) {
            std::memcpy(mlp_base, plan->replacement->data(),
                        static_cast<std::size_t>(seq) * udm * sizeof(float));
            std::memset(act_base, 0, static_cast<std::size_t>(seq) * dmlp * sizeof(float));
        } else if (frozen_layer ||
                   (target_is_head && plan->freeze_downstream && !c.parallel_attention) ||
                   (target_is_head && inputs_clean && c.parallel_attention)) {
            // Patched to clean (sequential same-layer MLP sits downstream of
            // its heads) or known bit-equal (parallel same-layer MLP reads the
            // untouched stream).
            std::memcpy(mlp_base, &clean->mlp_out[static_cast<std::size_t>(l) * seq * udm],
                        static_cast<std::size_t>(seq) * udm * sizeof(float));
            std::memcpy(act_base, &clean->neuron_act[static_cast<std::size_t>(l) * seq * dmlp],
                        static_cast<std::size_t>(seq) * dmlp * sizeof(float));
        } else {
            for (int k = 0; k < seq; ++k)
                apply_norm(c.norm_kind, {lw.norm2_gain.data(),
                                         lw.norm2_bias.empty() ? nullptr : lw.norm2_bias.data()},
                           &x[static_cast<std::size_t>(k) * udm],
                           &xn[static_cast<std::size_t>(k) * udm], dm);
            const float* win_t = model.win_transposed(l).data();
            for (int kb = 0; kb < seq; kb += kBlock) {
                const int ke = std::min(seq, kb + kBlock);
                const int bn = ke - kb;
                for (int j = 0; j < dmlp; ++j) {
                    const float* row = win_t + static_cast<std::size_t>(j) * udm;
                    const float bias = lw.bin[static_cast<std::size_t>(j)];
                    for (int b = 0; b < bn; ++b)
                        preblk[static_cast<std::size_t>(b) * dmlp + static_cast<std::size_t>(j)] =
                            detail::dot_f(row, &xn[static_cast<std::size_t>(kb + b) * udm], dm) +
                            bias;
                }
                for (int b = 0; b < bn; ++b) {
                    float* act = act_base + static_cast<std::size_t>(kb + b) * dmlp;
                    const float* pre = &preblk[static_cast<std::size_t>(b) * dmlp];
                    for (int j = 0; j < dmlp; ++j) act[j] = activation(c.activation_kind, pre[j]);
                    std::memset(mlp_base + static_cast<std::size_t>(kb + b) * udm, 0,
                                udm * sizeof(float));
                }
                // Neurons in index order, bias last: the layer output is the
                // exact sum of neuron contributions plus the output bias.
                for (int j = 0; j < dmlp; ++j) {
                    const float* wout_row = &lw.wout[static_cast<std::size_t>(j) * udm];
                    for (int b = 0; b < bn; ++b) {
                        const float a =
                            act_base[static_cast<std::size_t>(kb + b) * dmlp +
                                     static_cast<std::size_t>(j)];
                        if (a != 0.0f)
                            detail::axpy_f(mlp_base + static_cast<std::size_t>(kb + b) * udm, a,
                                           wout_row, dm);
                    }
                }
                for (int b = 0; b < bn; ++b) {
                    float* out = mlp_base + static_cast<std::size_t>(kb + b) * udm;
                    for (int d = 0; d < dm; ++d) out[d] += lw.bout[static_cast<std::size_t>(d)];
                }
            }
        }

        if (c.parallel_attention)
            for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn_sum[i];
        for (int k = 0; k < seq; ++k) {
            float* xr = &x[static_cast<std::size_t>(k) * udm];
            const float* out = mlp_base + static_cast<std::size_t>(k) * udm;
            for (int d = 0; d < dm; ++d) xr[d] += out[d];
        }
    }

    std::memcpy(t.residual.data(), x.data(), x.size() * sizeof(float));

    // Final norm, logits, centered logits.
    const NormParams fin{w.final_norm_gain.data(),
                         w.final_norm_bias.empty() ? nullptr : w.final_norm_bias.data()};
    for (int k = 0; k < seq; ++k) {
        const float* r = &t.residual[static_cast<std::size_t>(k) * udm];
        float scale;
        if (plan && plan->freeze_final_scale) {
            scale = clean->final_scale[static_cast<std::size_t>(k)];
        } else {
            scale = final_scale_of(c.norm_kind, r, dm);
        }
        t.final_scale[static_cast<std::size_t>(k)] = scale;
        float* out = &normed[static_cast<std::size_t>(k) * udm];
        if (c.norm_kind == NormKind::LayerNorm) {
            double mean = 0.0;
            for (int d = 0; d < dm; ++d) mean += r[d];
            mean /= dm;
            const float mu = static_cast<float>(mean);
            const float inv = 1.0f / scale;
            for (int d = 0; d < dm; ++d)
                out[d] = fin.gain[d] * ((r[d] - mu) * inv) + (fin.bias ? fin.bias[d] : 0.0f);
        } else {
            const float inv = 1.0f / scale;
            for (int d = 0; d < dm; ++d) out[d] = fin.gain[d] * (r[d] * inv);
        }
    }
    for (int kb = 0; kb < seq; kb += kBlock) {
        const int ke = std::min(seq, kb + kBlock);
        project_block(w.unembed_w.data(), V, normed.data(), dm, t.logits.data(), V, kb, ke, dm);
    }
    for (int k = 0; k < seq; ++k) {
        float* logit_row = &t.logits[static_cast<std::size_t>(k) * V];
        if (!w.unembed_b.empty())
            for (int v = 0; v < V; ++v) logit_row[v] += w.unembed_b[static_cast<std::size_t>(v)];
        const double mean_logit = detail::sum_d(logit_row, V) / V;
        float* centered_row = &t.centered_logits[static_cast<std::size_t>(k) * V];
        for (int v = 0; v < V; ++v)
            centered_row[v] = static_cast<float>(logit_row[v] - mean_logit);
    }
    return t;
}

} // namespace internal

ForwardTrace forward(const Model& model, const TokenSequence& tokens) {
    return internal::run_forward(model, tokens, nullptr);
}

} // namespace selfrepair
