#include "selfrepair/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "selfrepair/errors.hpp"

namespace selfrepair {

namespace {

void check_pair(const ForwardTrace& clean, const ForwardTrace& ablated, const ComponentId& head) {
    if (head.kind != ComponentId::Kind::Head)
        throw ContractError("self-repair is measured for heads; got " + head.str());
    if (clean.tokens != ablated.tokens)
        throw ContractError("clean and ablated traces cover different tokens");
    if (clean.stamp.has_value())
        throw ContractError("the clean trace must come from an unmodified forward pass");
    if (!ablated.stamp.has_value())
        throw ContractError("the ablated trace does not carry an intervention");
    const InterventionStamp& stamp = *ablated.stamp;
    if (stamp.mode == "reinject")
        throw ContractError("reinjection traces are not ablations");
    if (!(stamp.target == head))
        throw ContractError("the ablation targeted " + stamp.target.str() + ", not " + head.str());
}

} // namespace

double self_repair_value(double delta_logit, double delta_de) { return delta_logit - delta_de; }

SelfRepairRecord self_repair(const Model& model, const ForwardTrace& clean,
                             const ForwardTrace& ablated, ComponentId head, int position,
                             std::int64_t sequence_id) {
    check_pair(clean, ablated, head);
    const FoldedReadout readout = fold_readout(model, clean, position);

    SelfRepairRecord rec;
    rec.head = head;
    rec.sequence_id = sequence_id;
    rec.position = position;
    rec.de_clean = readout.contribution(clean.head_at(head.layer, head.index, position));
    rec.de_ablated = readout.contribution(ablated.head_at(head.layer, head.index, position));
    rec.logit_clean = static_cast<double>(
        clean.centered_logits_at(position)[static_cast<std::size_t>(readout.target_token)]);
    rec.logit_ablated = static_cast<double>(
        ablated.centered_logits_at(position)[static_cast<std::size_t>(readout.target_token)]);
    rec.delta_logit = rec.logit_ablated - rec.logit_clean;
    rec.delta_de = rec.de_ablated - rec.de_clean;
    rec.self_repair = self_repair_value(rec.delta_logit, rec.delta_de);
    rec.ln_ratio = static_cast<double>(clean.scale_at(position)) /
                   static_cast<double>(ablated.scale_at(position));
    return rec;
}

double BreakdownRecord::closure_residual() const {
    return ((self_repair - heads_term) - mlp_term) - ln_term;
}

BreakdownRecord breakdown(const Model& model, const ForwardTrace& clean,
                          const ForwardTrace& ablated, ComponentId head, int position,
                          std::int64_t sequence_id) {
    const SelfRepairRecord base = self_repair(model, clean, ablated, head, position, sequence_id);
    const ModelConfig& c = model.config();
    const FoldedReadout readout = fold_readout(model, clean, position);

    BreakdownRecord rec;
    rec.head = head;
    rec.sequence_id = sequence_id;
    rec.position = position;
    rec.self_repair = base.self_repair;

    // Heads strictly downstream (same-layer siblings read the same input).
    for (int l = head.layer + 1; l < c.n_layers; ++l)
        for (int h = 0; h < c.n_heads; ++h) {
            const double de_c = readout.contribution(clean.head_at(l, h, position));
            const double de_a = readout.contribution(ablated.head_at(l, h, position));
            rec.heads_term += de_a - de_c;
        }
    // In sequential blocks the ablated head's own layer MLP reads the changed
    // stream; in parallel blocks it does not.
    const int first_mlp = c.parallel_attention ? head.layer + 1 : head.layer;
    for (int l = first_mlp; l < c.n_layers; ++l) {
        const double de_c = readout.contribution(clean.mlp_at(l, position));
        const double de_a = readout.contribution(ablated.mlp_at(l, position));
        rec.mlp_term += de_a - de_c;
    }
    // The norm term is the residual, so the three terms always close.
    rec.ln_term = (rec.self_repair - rec.heads_term) - rec.mlp_term;
    return rec;
}

double ln_two_term_prediction(const Model& model, const ForwardTrace& clean,
                              const ForwardTrace& ablated, ComponentId head, int position) {
    check_pair(clean, ablated, head);
    const ModelConfig& c = model.config();
    const bool frozen = ablated.stamp->freeze_downstream;
    const bool last_layer_parallel = c.parallel_attention && head.layer == c.n_layers - 1;
    if (!frozen && !last_layer_parallel)
        throw ContractError(
            "two-term prediction needs a frozen-downstream ablation or a last-layer head in a "
            "parallel-attention model");

    const FoldedReadout readout = fold_readout(model, clean, position);
    const double scale_ratio = static_cast<double>(clean.scale_at(position)) /
                               static_cast<double>(ablated.scale_at(position));
    // The decomposed share of the clean centered logit; the bias share does
    // not pass through the scale.
    const double logit_fold = readout.contribution(clean.residual_at(position));
    const double de_clean = readout.contribution(clean.head_at(head.layer, head.index, position));
    const double de_ablated =
        readout.contribution(ablated.head_at(head.layer, head.index, position));
    return (scale_ratio - 1.0) * logit_fold + scale_ratio * (de_ablated - de_clean);
}

double ln_differential_repair(double scale_ratio, double logit_gap) {
    return (scale_ratio - 1.0) * logit_gap;
}

LnRatioStats ln_ratio_stats(std::span<const SelfRepairRecord> records) {
    if (records.empty()) throw ContractError("ln_ratio_stats requires at least one record");
    LnRatioStats stats;
    stats.n = static_cast<std::int64_t>(records.size());
    stats.histogram.assign(LnRatioStats::kHistBins, 0);
    const double width =
        (LnRatioStats::kHistHi - LnRatioStats::kHistLo) / LnRatioStats::kHistBins;
    std::int64_t gt_one = 0;
    for (const SelfRepairRecord& rec : records) {
        if (rec.ln_ratio > 1.0) ++gt_one;
        if (rec.ln_ratio < LnRatioStats::kHistLo) {
            ++stats.underflow;
        } else if (rec.ln_ratio >= LnRatioStats::kHistHi) {
            ++stats.overflow;
        } else {
            auto bin = static_cast<std::size_t>((rec.ln_ratio - LnRatioStats::kHistLo) / width);
            if (bin >= static_cast<std::size_t>(LnRatioStats::kHistBins))
                bin = LnRatioStats::kHistBins - 1;
            ++stats.histogram[bin];
        }
    }
    stats.fraction_gt_one = static_cast<double>(gt_one) / static_cast<double>(stats.n);
    return stats;
}

std::int64_t top_percentile_count(double fraction, std::int64_t n) {
    // ceil(fraction * n), robust to the product landing a few ulps above an
    // integer (0.02 * 50 must select exactly 1).
    const double x = fraction * static_cast<double>(n);
    const double r = std::round(x);
    if (std::abs(x - r) < 1e-9 * std::max(1.0, x)) return static_cast<std::int64_t>(r);
    return static_cast<std::int64_t>(std::ceil(x));
}

std::vector<SelfRepairRecord> top_percentile_filter(std::vector<SelfRepairRecord> records,
                                                    double fraction) {
    if (records.empty()) throw ContractError("top_percentile_filter requires records");
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ContractError("top_percentile_filter fraction must be in (0, 1]");
    std::sort(records.begin(), records.end(),
              [](const SelfRepairRecord& a, const SelfRepairRecord& b) {
                  if (a.de_clean != b.de_clean) return a.de_clean > b.de_clean;
                  if (a.sequence_id != b.sequence_id) return a.sequence_id < b.sequence_id;
                  return a.position < b.position;
              });
    const auto keep = static_cast<std::size_t>(
        top_percentile_count(fraction, static_cast<std::int64_t>(records.size())));
    records.resize(std::min(keep, records.size()));
    return records;
}

ClippedLnFraction clipped_ln_fraction(std::span<const SelfRepairRecord> repairs,
                                      std::span<const BreakdownRecord> breakdowns) {
    if (repairs.size() != breakdowns.size())
        throw ContractError("clipped_ln_fraction requires aligned record spans");
    ClippedLnFraction out;
    double sum = 0.0;
    for (std::size_t i = 0; i < repairs.size(); ++i) {
        const SelfRepairRecord& r = repairs[i];
        const BreakdownRecord& b = breakdowns[i];
        if (!(r.head == b.head) || r.sequence_id != b.sequence_id || r.position != b.position)
            throw ContractError("clipped_ln_fraction record spans do not line up");
        if (r.de_clean == 0.0) {
            ++out.n_skipped;
            continue;
        }
        sum += std::clamp(b.ln_term / r.de_clean, 0.0, 1.0);
        ++out.n_used;
    }
    out.mean = out.n_used > 0 ? sum / static_cast<double>(out.n_used) : 0.0;
    return out;
}

} // namespace selfrepair
