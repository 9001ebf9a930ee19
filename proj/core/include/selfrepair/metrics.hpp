#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "selfrepair/attribution.hpp"
#include "selfrepair/model.hpp"
#include "selfrepair/trace.hpp"

namespace selfrepair {

/// One (head, token) self-repair measurement. Logits are centered; both direct
/// effects use the clean-run final-norm scale. self_repair is constructed as
/// delta_logit - delta_de, so the identity holds by definition. A positive
/// clean direct effect with negative self-repair is downstream breakage, not
/// repair.
struct SelfRepairRecord {
    ComponentId head;
    std::int64_t sequence_id = 0;
    int position = 0;
    double de_clean = 0.0;
    double de_ablated = 0.0;
    double logit_clean = 0.0;
    double logit_ablated = 0.0;
    double delta_logit = 0.0;
    double delta_de = 0.0;
    double self_repair = 0.0;
    double ln_ratio = 1.0; // clean scale / ablated scale, > 0

    bool downstream_breakage() const { return de_clean > 0.0 && self_repair < 0.0; }
};

double self_repair_value(double delta_logit, double delta_de);

/// Measures self-repair of `head` at `position` from a clean trace and an
/// ablated trace over the same tokens. Throws ContractError on a trace/token
/// mismatch or when the ablated trace did not target `head`.
SelfRepairRecord self_repair(const Model& model, const ForwardTrace& clean,
                             const ForwardTrace& ablated, ComponentId head, int position,
                             std::int64_t sequence_id = 0);

/// Self-repair split into the changed direct effects of downstream heads,
/// downstream MLP layers, and a norm term defined as the residual, so
/// heads_term + mlp_term + ln_term always closes to self_repair. In sequential
/// blocks the ablated head's own layer MLP counts as downstream; in parallel
/// blocks it reads the same input stream and does not.
struct BreakdownRecord {
    ComponentId head;
    std::int64_t sequence_id = 0;
    int position = 0;
    double heads_term = 0.0;
    double mlp_term = 0.0;
    double ln_term = 0.0;
    double self_repair = 0.0;

    /// Evaluated in construction order; exactly zero.
    double closure_residual() const;
};

BreakdownRecord breakdown(const Model& model, const ForwardTrace& clean,
                          const ForwardTrace& ablated, ComponentId head, int position,
                          std::int64_t sequence_id = 0);

/// Two-term prediction of the centered-logit change from the final-norm scale
/// alone:
///
///   (S/S' - 1) * logit_fold + (S/S') * (DE'_head - DE_head)
///
/// where logit_fold is the decomposed part of the clean centered logit (the
/// centered logit minus decomposition_bias) and both direct effects use the
/// clean scale. Valid only when nothing downstream of the head changed except
/// the final scale: the ablated run must have frozen downstream components, or
/// the head must sit in the last layer of a parallel-attention model. Throws
/// ContractError otherwise.
double ln_two_term_prediction(const Model& model, const ForwardTrace& clean,
                              const ForwardTrace& ablated, ComponentId head, int position);

/// Differential repair between two candidate tokens under a scale ratio:
/// (ratio - 1) * (logit_a - logit_b).
double ln_differential_repair(double scale_ratio, double logit_gap);

/// Scale-ratio statistics over a set of records: the exact fraction with
/// S/S' strictly greater than one (ties at 1 excluded) and a fixed-bin
/// histogram over [0.90, 1.10] with underflow/overflow buckets.
struct LnRatioStats {
    static constexpr double kHistLo = 0.90;
    static constexpr double kHistHi = 1.10;
    static constexpr int kHistBins = 40;

    std::int64_t n = 0;
    double fraction_gt_one = 0.0;
    std::int64_t underflow = 0;
    std::int64_t overflow = 0;
    std::vector<std::int64_t> histogram; // kHistBins counts
};

LnRatioStats ln_ratio_stats(std::span<const SelfRepairRecord> records);

/// ceil(fraction * n), robust to the product landing a few ulps above an
/// integer.
std::int64_t top_percentile_count(double fraction, std::int64_t n);

/// The ceil(fraction * N) records with the largest clean direct effect; ties
/// broken by (sequence id, position) ascending so repeated runs select the
/// same subset. Throws ContractError on empty input or fraction outside (0,1].
std::vector<SelfRepairRecord> top_percentile_filter(std::vector<SelfRepairRecord> records,
                                                    double fraction);

/// Mean over records of clamp(ln_term / de_clean, 0, 1). Records with
/// de_clean == 0 are skipped and counted. Inputs are parallel spans over the
/// same (head, sequence, position) keys; callers pre-filter to the top
/// fraction by direct effect.
struct ClippedLnFraction {
    double mean = 0.0;
    std::int64_t n_used = 0;
    std::int64_t n_skipped = 0;
};

ClippedLnFraction clipped_ln_fraction(std::span<const SelfRepairRecord> repairs,
                                      std::span<const BreakdownRecord> breakdowns);

} // namespace selfrepair
