#include "selfrepair/intervention.hpp"

#include <cstring>

#include "detail.hpp"
#include "forward_internal.hpp"
#include "selfrepair/attribution.hpp"
#include "selfrepair/errors.hpp"

namespace selfrepair {

AblationMode AblationMode::zero() { return {Kind::Zero, {}, nullptr, {}, 0.0}; }

AblationMode AblationMode::mean(std::vector<float> vec) {
    AblationMode m;
    m.kind = Kind::Mean;
    m.mean_vector = std::move(vec);
    return m;
}

AblationMode AblationMode::resample(const ForwardTrace& source, std::vector<int> position_map) {
    AblationMode m;
    m.kind = Kind::Resample;
    m.source_trace = &source;
    m.source_position_map = std::move(position_map);
    return m;
}

AblationMode AblationMode::reinject(double alpha) {
    AblationMode m;
    m.kind = Kind::Reinject;
    m.alpha = alpha;
    return m;
}

std::vector<int> resample_pairing(int batch_size) {
    if (batch_size < 2)
        throw ContractError("resample pairing needs at least two sequences");
    std::vector<int> out(static_cast<std::size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) out[static_cast<std::size_t>(i)] = (i + 1) % batch_size;
    return out;
}

std::vector<int> resample_pairing(int batch_size, std::uint64_t seed) {
    if (batch_size < 2)
        throw ContractError("resample pairing needs at least two sequences");
    // Sattolo's shuffle builds a single cycle, so no index maps to itself.
    std::vector<int> perm(static_cast<std::size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) perm[static_cast<std::size_t>(i)] = i;
    detail::SplitMix64 rng(seed ^ 0xd0c0ffeeULL);
    for (int i = batch_size - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    return perm;
}

std::span<const float> HeadMeans::at(int layer, int head) const {
    const auto udm = static_cast<std::size_t>(d_model);
    return {mean.data() + (static_cast<std::size_t>(layer) * n_heads + head) * udm, udm};
}

HeadMeans compute_mean_output(const Model& model, std::span<const TokenSequence> batch) {
    if (batch.empty()) throw DataError("mean ablation requires a non-empty reference batch");
    const ModelConfig& c = model.config();
    HeadMeans means;
    means.n_layers = c.n_layers;
    means.n_heads = c.n_heads;
    means.d_model = c.d_model;

    std::vector<double> acc(static_cast<std::size_t>(c.n_layers) * c.n_heads * c.d_model, 0.0);
    for (const TokenSequence& tokens : batch) {
        const ForwardTrace trace = forward(model, tokens);
        for (int l = 0; l < c.n_layers; ++l)
            for (int h = 0; h < c.n_heads; ++h) {
                double* dst = &acc[(static_cast<std::size_t>(l) * c.n_heads + h) *
                                   static_cast<std::size_t>(c.d_model)];
                for (int k = 0; k < trace.seq_len; ++k) {
                    const auto out = trace.head_at(l, h, k);
                    for (int d = 0; d < c.d_model; ++d) dst[d] += out[static_cast<std::size_t>(d)];
                }
            }
        means.n_samples += trace.seq_len;
    }
    means.mean.resize(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i)
        means.mean[i] = static_cast<float>(acc[i] / static_cast<double>(means.n_samples));
    return means;
}

namespace {

const char* mode_name(AblationMode::Kind kind) {
    switch (kind) {
        case AblationMode::Kind::Zero: return "zero";
        case AblationMode::Kind::Mean: return "mean";
        case AblationMode::Kind::Resample: return "resample";
        case AblationMode::Kind::Reinject: return "reinject";
    }
    return "?";
}

// Resolves the mode into per-position replacement rows for the target.
std::vector<float> build_replacement(const Model& model, int seq, const InterventionSpec& spec) {
    const int dm = model.config().d_model;
    const auto udm = static_cast<std::size_t>(dm);
    std::vector<float> rows(static_cast<std::size_t>(seq) * udm, 0.0f);

    switch (spec.mode.kind) {
        case AblationMode::Kind::Zero:
            return rows;
        case AblationMode::Kind::Mean: {
            if (static_cast<int>(spec.mode.mean_vector.size()) != dm)
                throw ContractError("mean ablation vector must have width d_model");
            for (int k = 0; k < seq; ++k)
                std::memcpy(&rows[static_cast<std::size_t>(k) * udm], spec.mode.mean_vector.data(),
                            udm * sizeof(float));
            return rows;
        }
        case AblationMode::Kind::Resample: {
            const ForwardTrace* src = spec.mode.source_trace;
            if (!src) throw ContractError("resample ablation requires a source trace");
            if (src->config.d_model != dm)
                throw ContractError("resample source comes from an incompatible model");
            const auto& map = spec.mode.source_position_map;
            if (!map.empty() && static_cast<int>(map.size()) < seq)
                throw ContractError("resample position map shorter than the sequence");
            for (int k = 0; k < seq; ++k) {
                const int sp = map.empty() ? k : map[static_cast<std::size_t>(k)];
                if (sp < 0 || sp >= src->seq_len)
                    throw DataError("resample source has no position " + std::to_string(sp) +
                                    " needed for target position " + std::to_string(k));
                std::span<const float> out =
                    spec.target.kind == ComponentId::Kind::Head
                        ? src->head_at(spec.target.layer, spec.target.index, sp)
                        : src->mlp_at(spec.target.layer, sp);
                std::memcpy(&rows[static_cast<std::size_t>(k) * udm], out.data(),
                            udm * sizeof(float));
            }
            return rows;
        }
        case AblationMode::Kind::Reinject:
            throw ContractError("reinject is not a replacement ablation");
    }
    throw ContractError("unknown ablation mode");
}

} // namespace

ForwardTrace run_with_intervention(const Model& model, const TokenSequence& tokens,
                                   const InterventionSpec& spec, const ForwardTrace* clean,
                                   ForwardTrace&& recycle) {
    const ModelConfig& c = model.config();
    spec.target.validate(c);
    if (spec.target.kind != ComponentId::Kind::Head &&
        spec.target.kind != ComponentId::Kind::MlpLayer)
        throw ContractError("intervention target must be a head or an MLP layer");
    if (spec.mode.kind == AblationMode::Kind::Reinject &&
        (spec.freeze_downstream || spec.freeze_final_scale))
        throw ContractError("reinjection is a clean-context rerun and rejects freeze flags");

    // The freeze flags patch clean values; compute the clean trace if the
    // caller did not supply one.
    ForwardTrace computed_clean;
    const bool needs_clean = spec.freeze_downstream || spec.freeze_final_scale ||
                             spec.mode.kind == AblationMode::Kind::Reinject;
    if (!clean && needs_clean) {
        computed_clean = forward(model, tokens);
        clean = &computed_clean;
    }

    internal::InterventionPlan plan;
    plan.clean = clean;
    plan.freeze_downstream = spec.freeze_downstream;
    plan.freeze_final_scale = spec.freeze_final_scale;
    plan.has_stamp = true;
    plan.stamp.target = spec.target;
    plan.stamp.mode = mode_name(spec.mode.kind);
    plan.stamp.freeze_downstream = spec.freeze_downstream;
    plan.stamp.freeze_final_scale = spec.freeze_final_scale;

    std::vector<float> replacement;
    std::vector<float> inject;
    if (spec.mode.kind == AblationMode::Kind::Reinject) {
        plan.stamp.reinject_alpha = spec.mode.alpha;
        if (spec.target.kind != ComponentId::Kind::Head)
            throw ContractError("reinjection targets must be heads");
        if (spec.mode.alpha != 0.0) {
            const auto udm = static_cast<std::size_t>(c.d_model);
            inject.assign(static_cast<std::size_t>(tokens.length()) * udm, 0.0f);
            for (int k = 0; k < tokens.length(); ++k) {
                const auto out = clean->head_at(spec.target.layer, spec.target.index, k);
                float* dst = &inject[static_cast<std::size_t>(k) * udm];
                for (int d = 0; d < c.d_model; ++d)
                    dst[d] = static_cast<float>(spec.mode.alpha) * out[static_cast<std::size_t>(d)];
            }
            plan.inject_layer = spec.target.layer;
            plan.inject = &inject;
        }
    } else {
        replacement = build_replacement(model, tokens.length(), spec);
        plan.replacement = &replacement;
        plan.target_kind = spec.target.kind == ComponentId::Kind::Head
                               ? internal::InterventionPlan::TargetKind::Head
                               : internal::InterventionPlan::TargetKind::Mlp;
        plan.target_layer = spec.target.layer;
        plan.target_head = spec.target.index;
    }

    return internal::run_forward(model, tokens, &plan, std::move(recycle));
}

ReinjectionResult reinject_head(const Model& model, const TokenSequence& tokens, ComponentId head,
                                double alpha, const ForwardTrace* clean) {
    if (head.kind != ComponentId::Kind::Head)
        throw ContractError("reinjection targets must be heads");
    head.validate(model.config());

    ForwardTrace computed_clean;
    if (!clean) {
        computed_clean = forward(model, tokens);
        clean = &computed_clean;
    }

    InterventionSpec spec;
    spec.target = head;
    spec.mode = AblationMode::reinject(alpha);

    ReinjectionResult result{.clean_de = {}, .new_de = {}, .trace = run_with_intervention(
                                                               model, tokens, spec, clean)};
    const int scoring = clean->scoring_positions();
    result.clean_de.reserve(static_cast<std::size_t>(scoring));
    result.new_de.reserve(static_cast<std::size_t>(scoring));
    for (int k = 0; k < scoring; ++k) {
        // Both effects at the clean final-norm scale.
        const FoldedReadout readout = fold_readout(model, *clean, k);
        result.clean_de.push_back(readout.contribution(clean->head_at(head.layer, head.index, k)));
        result.new_de.push_back(
            readout.contribution(result.trace.head_at(head.layer, head.index, k)));
    }
    return result;
}

} // namespace selfrepair
