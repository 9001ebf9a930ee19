#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "selfrepair/metrics.hpp"

namespace selfrepair {

/// Per-neuron self-repair at one token: the change in the neuron's direct
/// effect (clean scale), plus its share of the ablated head's clean direct
/// effect.
struct NeuronRepairRecord {
    std::int64_t sequence_id = 0;
    int position = 0;
    int neuron = -1;
    double de_clean_neuron = 0.0;
    double de_ablated_neuron = 0.0;
    double delta_de = 0.0;            // neuron self-repair
    double fraction_of_head_de = 0.0; // delta_de / clean head DE
};

/// One record per neuron of `layer`, sorted by delta_de descending (ties by
/// neuron index). The ablated trace must come from a head ablation strictly
/// upstream of the layer; otherwise throws ContractError. Summed with the MLP
/// bias change the deltas equal the layer's direct-effect change.
std::vector<NeuronRepairRecord> neuron_repair_table(const Model& model, const ForwardTrace& clean,
                                                    const ForwardTrace& ablated, int layer,
                                                    int position, std::int64_t sequence_id = 0);

/// Frequency matrix over tokens: cell (rank r, threshold t) is the fraction of
/// tokens where the r-th ranked neuron's fraction_of_head_de >= t. Rows are
/// non-increasing across ranks and across thresholds. Throws ContractError on
/// empty input.
struct ThresholdFrequencyMatrix {
    std::vector<int> ranks;          // 1..max_rank
    std::vector<double> thresholds;  // descending
    std::vector<double> cells;       // [rank][threshold]
    std::int64_t n_tokens = 0;

    double at(int rank_index, int threshold_index) const;
};

inline constexpr double kDefaultRepairThresholds[] = {0.5, 0.1, 0.05, 0.02, 0.01};

ThresholdFrequencyMatrix threshold_frequency(
    std::span<const std::vector<NeuronRepairRecord>> per_token, int max_rank = 50,
    std::span<const double> thresholds = kDefaultRepairThresholds);

/// Cumulative share of the total absolute direct-effect change, accumulated in
/// self-repair order: neurons sorted by signed delta_de descending, value at
/// rank k = sum of the top-k |delta_de| over the total. Monotone, ends at 1.
/// All-zero deltas yield a degenerate curve.
struct CumulativeCurve {
    std::vector<double> share; // index k-1 = share after top k neurons
    bool degenerate = false;
};

CumulativeCurve cumulative_abs_change(std::span<const NeuronRepairRecord> token_records);

/// Top repairing neurons of one token: indices with delta_de > 0, by delta_de
/// descending (ties by index), at most k. Fewer than k leaves a short set.
std::vector<int> top_repairing_neurons(std::span<const NeuronRepairRecord> token_records, int k);

/// Membership frequency of each neuron across per-token top-k sets.
struct OverlapStats {
    std::vector<std::pair<int, double>> frequency; // (neuron, frequency), descending
    double max_frequency = 0.0;
    int max_neuron = -1;
    std::int64_t n_tokens = 0;
    std::int64_t n_short_sets = 0; // tokens with fewer than k repairing neurons
};

OverlapStats neuron_overlap(std::span<const std::vector<int>> per_token_sets, int k = 10);

/// Erasure classification: a neuron with a negative clean direct effect that
/// becomes less negative under an upstream ablation was erasing the ablated
/// component's effect and is now anti-erased; a positive clean effect that
/// drops is a positive loss. Every record falls in exactly one class.
enum class ErasureClass { ErasureAntiErased, PositiveLoss, Other };

ErasureClass classify_erasure(const NeuronRepairRecord& record);
std::string to_string(ErasureClass c);

} // namespace selfrepair
