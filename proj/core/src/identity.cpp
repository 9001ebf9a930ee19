#include "selfrepair/identity.hpp"

#include <cmath>
#include <cstring>

#include "selfrepair/attribution.hpp"
#include "selfrepair/corpus.hpp"
#include "selfrepair/forward.hpp"
#include "selfrepair/intervention.hpp"
#include "selfrepair/metrics.hpp"
#include "selfrepair/model.hpp"
#include "selfrepair/neurons.hpp"

namespace selfrepair {

namespace {

constexpr double kTol = 1e-4;

ModelConfig small_config(bool parallel, NormKind norm) {
    ModelConfig c;
    c.n_layers = 3;
    c.n_heads = 4;
    c.d_model = 64;
    c.d_head = 16;
    c.d_mlp = 128;
    c.vocab_size = 64;
    c.max_seq = 32;
    c.parallel_attention = parallel;
    c.norm_kind = norm;
    c.positional_kind = parallel ? PositionalKind::Rotary : PositionalKind::AbsoluteLearned;
    c.activation_kind = ActivationKind::Gelu;
    return c;
}

std::vector<TokenSequence> prompts_for(const ModelConfig& c, std::uint64_t seed, int count,
                                       int len) {
    const Corpus corpus = make_random_corpus(count, len, c.vocab_size, seed);
    return corpus.sequences;
}

bool traces_bit_equal(const ForwardTrace& a, const ForwardTrace& b) {
    auto eq = [](const std::vector<float>& x, const std::vector<float>& y) {
        return x.size() == y.size() &&
               (x.empty() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
    };
    return eq(a.residual, b.residual) && eq(a.logits, b.logits) &&
           eq(a.centered_logits, b.centered_logits) && eq(a.head_out, b.head_out) &&
           eq(a.mlp_out, b.mlp_out) && eq(a.neuron_act, b.neuron_act) &&
           eq(a.final_scale, b.final_scale) && eq(a.layer_input, b.layer_input);
}

} // namespace

bool IdentityReport::all_pass() const {
    for (const IdentityCheck& c : checks)
        if (!c.pass) return false;
    return true;
}

IdentityReport run_identity_suite(std::uint64_t seed) {
    IdentityReport report;
    auto add = [&](const std::string& name, double worst, double tol, std::string detail = "") {
        report.checks.push_back({name, worst <= tol, worst, tol, std::move(detail)});
    };
    auto add_flag = [&](const std::string& name, bool pass, std::string detail = "") {
        report.checks.push_back({name, pass, pass ? 0.0 : 1.0, 0.0, std::move(detail)});
    };

    const std::pair<bool, NormKind> variants[] = {{true, NormKind::LayerNorm},
                                                  {false, NormKind::LayerNorm},
                                                  {true, NormKind::RmsNorm},
                                                  {false, NormKind::RmsNorm}};

    double worst_recon = 0.0, worst_closure = 0.0, worst_head_subsum = 0.0,
           worst_neuron_subsum = 0.0, worst_neuron_de = 0.0, worst_frozen = 0.0,
           worst_two_term = 0.0, worst_breakdown_closure = 0.0, worst_frozen_scale_ln = 0.0,
           worst_frozen_scale_sum = 0.0, worst_center = 0.0;
    bool noop_ok = true, causality_ok = true, determinism_ok = true;

    int variant_idx = 0;
    for (const auto& [parallel, norm] : variants) {
        const ModelConfig config = small_config(parallel, norm);
        const Model model = init_toy_model(config, seed + static_cast<std::uint64_t>(variant_idx));
        const auto prompts = prompts_for(config, seed * 31 + 7, 4, 24);
        const ModelConfig& c = model.config();

        std::vector<ForwardTrace> traces;
        traces.reserve(prompts.size());
        for (const TokenSequence& p : prompts) traces.push_back(forward(model, p));

        // Reconstruction, decomposition closure, sub-sums, centering.
        for (const ForwardTrace& trace : traces) {
            worst_recon = std::max(worst_recon, residual_reconstruction_check(trace));
            for (int pos = 0; pos < trace.scoring_positions(); ++pos) {
                const DirectEffectTable table = direct_effect_all(model, trace, pos);
                worst_closure = std::max(worst_closure, std::abs(table.closure_residual()));

                const FoldedReadout readout = fold_readout(model, trace, pos);
                for (int l = 0; l < c.n_layers; ++l) {
                    // Head + bias direct effects against the attention layer
                    // output reconstructed from the trace.
                    double head_sum = readout.contribution(trace.attn_bias_at(l));
                    for (int h = 0; h < c.n_heads; ++h)
                        head_sum += readout.contribution(trace.head_at(l, h, pos));
                    std::vector<float> attn_out(static_cast<std::size_t>(c.d_model), 0.0f);
                    for (int h = 0; h < c.n_heads; ++h) {
                        const auto v = trace.head_at(l, h, pos);
                        for (int d = 0; d < c.d_model; ++d)
                            attn_out[static_cast<std::size_t>(d)] += v[static_cast<std::size_t>(d)];
                    }
                    const auto bias = trace.attn_bias_at(l);
                    for (int d = 0; d < c.d_model; ++d)
                        attn_out[static_cast<std::size_t>(d)] += bias[static_cast<std::size_t>(d)];
                    worst_head_subsum = std::max(
                        worst_head_subsum, std::abs(head_sum - readout.contribution(attn_out)));

                    const std::vector<double> neuron_des =
                        neuron_direct_effects(model, trace, readout, l);
                    double neuron_sum = readout.contribution(trace.mlp_bias_at(l));
                    for (double de : neuron_des) neuron_sum += de;
                    worst_neuron_de = std::max(
                        worst_neuron_de,
                        std::abs(neuron_sum - readout.contribution(trace.mlp_at(l, pos))));
                }
                // Vector-level neuron sub-decomposition of each MLP output.
                for (int l = 0; l < c.n_layers; ++l) {
                    const auto act = trace.neuron_act_at(l, pos);
                    const auto& wout = model.weights().layers[static_cast<std::size_t>(l)].wout;
                    const auto& bout = model.weights().layers[static_cast<std::size_t>(l)].bout;
                    const auto mlp = trace.mlp_at(l, pos);
                    for (int d = 0; d < c.d_model; ++d) {
                        double s = bout[static_cast<std::size_t>(d)];
                        for (int j = 0; j < c.d_mlp; ++j)
                            s += static_cast<double>(act[static_cast<std::size_t>(j)]) *
                                 wout[static_cast<std::size_t>(j) * c.d_model +
                                      static_cast<std::size_t>(d)];
                        worst_neuron_subsum = std::max(
                            worst_neuron_subsum,
                            std::abs(s - static_cast<double>(mlp[static_cast<std::size_t>(d)])));
                    }
                }
            }
            // Centered logits average to zero.
            for (int pos = 0; pos < trace.seq_len; ++pos) {
                const auto row = trace.centered_logits_at(pos);
                double mean = 0.0;
                for (float v : row) mean += v;
                worst_center = std::max(worst_center, std::abs(mean / c.vocab_size));
            }
        }

        // Frozen-path baseline, two-term identity, breakdown closure.
        for (int l = 0; l < c.n_layers; ++l)
            for (int h = 0; h < c.n_heads; ++h) {
                const ComponentId head = ComponentId::head(l, h);
                InterventionSpec frozen_spec;
                frozen_spec.target = head;
                frozen_spec.mode = AblationMode::resample(traces[1]);
                frozen_spec.freeze_downstream = true;
                frozen_spec.freeze_final_scale = true;
                const ForwardTrace frozen =
                    run_with_intervention(model, prompts[0], frozen_spec, &traces[0]);

                InterventionSpec downstream_spec = frozen_spec;
                downstream_spec.freeze_final_scale = false;
                const ForwardTrace frozen_downstream =
                    run_with_intervention(model, prompts[0], downstream_spec, &traces[0]);

                InterventionSpec scale_spec = frozen_spec;
                scale_spec.freeze_downstream = false;
                const ForwardTrace frozen_scale =
                    run_with_intervention(model, prompts[0], scale_spec, &traces[0]);

                InterventionSpec open_spec = frozen_spec;
                open_spec.freeze_downstream = false;
                open_spec.freeze_final_scale = false;
                const ForwardTrace open = run_with_intervention(model, prompts[0], open_spec,
                                                                &traces[0]);

                for (int pos = 0; pos < traces[0].scoring_positions(); ++pos) {
                    const SelfRepairRecord rec =
                        self_repair(model, traces[0], frozen, head, pos);
                    worst_frozen = std::max(worst_frozen,
                                            std::abs(rec.delta_logit - rec.delta_de));

                    const double pred =
                        ln_two_term_prediction(model, traces[0], frozen_downstream, head, pos);
                    const SelfRepairRecord down_rec =
                        self_repair(model, traces[0], frozen_downstream, head, pos);
                    worst_two_term =
                        std::max(worst_two_term, std::abs(pred - down_rec.delta_logit));

                    const BreakdownRecord br = breakdown(model, traces[0], open, head, pos);
                    worst_breakdown_closure = std::max(worst_breakdown_closure, std::abs(br.closure_residual()));

                    const BreakdownRecord br_scale =
                        breakdown(model, traces[0], frozen_scale, head, pos);
                    worst_frozen_scale_ln =
                        std::max(worst_frozen_scale_ln, std::abs(br_scale.ln_term));
                    worst_frozen_scale_sum = std::max(
                        worst_frozen_scale_sum,
                        std::abs(br_scale.heads_term + br_scale.mlp_term - br_scale.self_repair));
                }
            }

        // No-op interventions reproduce the clean trace bit for bit.
        {
            InterventionSpec self_resample;
            self_resample.target = ComponentId::head(c.n_layers / 2, 0);
            self_resample.mode = AblationMode::resample(traces[0]);
            const ForwardTrace same =
                run_with_intervention(model, prompts[0], self_resample, &traces[0]);
            if (!traces_bit_equal(same, traces[0])) noop_ok = false;

            const ReinjectionResult zero_alpha =
                reinject_head(model, prompts[0], ComponentId::head(0, 0), 0.0, &traces[0]);
            if (!traces_bit_equal(zero_alpha.trace, traces[0])) noop_ok = false;
        }

        // Causality: editing token j leaves positions < j bit-identical.
        {
            TokenSequence edited = prompts[0];
            const int j = edited.length() / 2;
            edited.ids[static_cast<std::size_t>(j)] =
                static_cast<std::int32_t>((edited.ids[static_cast<std::size_t>(j)] + 1) %
                                          c.vocab_size);
            const ForwardTrace t2 = forward(model, edited);
            const auto udm = static_cast<std::size_t>(c.d_model);
            const auto uv = static_cast<std::size_t>(c.vocab_size);
            for (int k = 0; k < j && causality_ok; ++k) {
                if (std::memcmp(traces[0].residual.data() + static_cast<std::size_t>(k) * udm,
                                t2.residual.data() + static_cast<std::size_t>(k) * udm,
                                udm * sizeof(float)) != 0 ||
                    std::memcmp(traces[0].logits.data() + static_cast<std::size_t>(k) * uv,
                                t2.logits.data() + static_cast<std::size_t>(k) * uv,
                                uv * sizeof(float)) != 0)
                    causality_ok = false;
            }
        }

        // Determinism: same seed, same bytes.
        {
            const Model again = init_toy_model(config, seed + static_cast<std::uint64_t>(variant_idx));
            if (again.weight_hash() != model.weight_hash()) determinism_ok = false;
            const ForwardTrace t2 = forward(again, prompts[0]);
            if (!traces_bit_equal(t2, traces[0])) determinism_ok = false;
        }
        ++variant_idx;
    }

    // Zero-ablating a head whose output is synthetically zero changes nothing.
    {
        const ModelConfig config = small_config(true, NormKind::LayerNorm);
        const Model base = init_toy_model(config, seed + 100);
        ModelWeights weights = base.weights();
        const int l = 1, h = 2;
        float* wo = weights.layers[l].wo.data();
        for (int r = h * config.d_head; r < (h + 1) * config.d_head; ++r)
            for (int d = 0; d < config.d_model; ++d)
                wo[static_cast<std::size_t>(r) * config.d_model + d] = 0.0f;
        const Model zeroed(config, std::move(weights));
        const auto prompts = prompts_for(config, seed + 5, 1, 20);
        const ForwardTrace clean = forward(zeroed, prompts[0]);
        InterventionSpec spec;
        spec.target = ComponentId::head(l, h);
        spec.mode = AblationMode::zero();
        const ForwardTrace ablated = run_with_intervention(zeroed, prompts[0], spec, &clean);
        if (std::memcmp(clean.logits.data(), ablated.logits.data(),
                        clean.logits.size() * sizeof(float)) != 0)
            noop_ok = false;
    }

    add("residual-reconstruction", worst_recon, kTol);
    add("direct-effect-closure", worst_closure, kTol);
    add("head-subsum", worst_head_subsum, kTol);
    add("neuron-vector-subsum", worst_neuron_subsum, kTol);
    add("neuron-de-subsum", worst_neuron_de, kTol);
    add("frozen-path-baseline", worst_frozen, kTol);
    add("two-term-norm-identity", worst_two_term, kTol);
    add("breakdown-closure", worst_breakdown_closure, 0.0);
    add("frozen-scale-ln-term", worst_frozen_scale_ln, kTol);
    add("frozen-scale-downstream-sum", worst_frozen_scale_sum, kTol);
    add("centered-logit-mean", worst_center, 1e-5);
    add_flag("no-op-bit-exactness", noop_ok);
    add_flag("causality-prefix", causality_ok);
    add_flag("determinism", determinism_ok);
    return report;
}

} // namespace selfrepair
