#include "selfrepair/neurons.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "selfrepair/errors.hpp"

namespace selfrepair {

std::vector<NeuronRepairRecord> neuron_repair_table(const Model& model, const ForwardTrace& clean,
                                                    const ForwardTrace& ablated, int layer,
                                                    int position, std::int64_t sequence_id) {
    const ModelConfig& c = model.config();
    if (layer < 0 || layer >= c.n_layers)
        throw ContractError("neuron_repair_table: layer out of range");
    if (!ablated.stamp.has_value() || ablated.stamp->target.kind != ComponentId::Kind::Head)
        throw ContractError("neuron_repair_table requires a head ablation");
    if (clean.tokens != ablated.tokens)
        throw ContractError("clean and ablated traces cover different tokens");
    const ComponentId head = ablated.stamp->target;
    const int first_downstream = c.parallel_attention ? head.layer + 1 : head.layer;
    if (layer < first_downstream)
        throw ContractError("MLP layer " + std::to_string(layer) + " is not downstream of " +
                            head.str());

    const FoldedReadout readout = fold_readout(model, clean, position);
    const std::vector<double> de_clean = neuron_direct_effects(model, clean, readout, layer);
    const std::vector<double> de_ablated = neuron_direct_effects(model, ablated, readout, layer);
    const double head_de = readout.contribution(clean.head_at(head.layer, head.index, position));

    std::vector<NeuronRepairRecord> records(static_cast<std::size_t>(c.d_mlp));
    for (int j = 0; j < c.d_mlp; ++j) {
        NeuronRepairRecord& r = records[static_cast<std::size_t>(j)];
        r.sequence_id = sequence_id;
        r.position = position;
        r.neuron = j;
        r.de_clean_neuron = de_clean[static_cast<std::size_t>(j)];
        r.de_ablated_neuron = de_ablated[static_cast<std::size_t>(j)];
        r.delta_de = r.de_ablated_neuron - r.de_clean_neuron;
        r.fraction_of_head_de = head_de == 0.0 ? 0.0 : r.delta_de / head_de;
    }
    std::sort(records.begin(), records.end(),
              [](const NeuronRepairRecord& a, const NeuronRepairRecord& b) {
                  if (a.delta_de != b.delta_de) return a.delta_de > b.delta_de;
                  return a.neuron < b.neuron;
              });
    return records;
}

double ThresholdFrequencyMatrix::at(int rank_index, int threshold_index) const {
    return cells[static_cast<std::size_t>(rank_index) * thresholds.size() +
                 static_cast<std::size_t>(threshold_index)];
}

ThresholdFrequencyMatrix threshold_frequency(
    std::span<const std::vector<NeuronRepairRecord>> per_token, int max_rank,
    std::span<const double> thresholds) {
    if (per_token.empty()) throw ContractError("threshold_frequency requires tokens");
    if (max_rank < 1) throw ContractError("threshold_frequency requires max_rank >= 1");

    ThresholdFrequencyMatrix m;
    m.n_tokens = static_cast<std::int64_t>(per_token.size());
    m.thresholds.assign(thresholds.begin(), thresholds.end());
    m.ranks.resize(static_cast<std::size_t>(max_rank));
    for (int r = 0; r < max_rank; ++r) m.ranks[static_cast<std::size_t>(r)] = r + 1;
    m.cells.assign(static_cast<std::size_t>(max_rank) * thresholds.size(), 0.0);

    for (const std::vector<NeuronRepairRecord>& records : per_token) {
        // Rank by signed self-repair, descending; ties by neuron index.
        std::vector<double> fractions;
        fractions.reserve(records.size());
        {
            std::vector<const NeuronRepairRecord*> sorted;
            sorted.reserve(records.size());
            for (const auto& r : records) sorted.push_back(&r);
            std::sort(sorted.begin(), sorted.end(),
                      [](const NeuronRepairRecord* a, const NeuronRepairRecord* b) {
                          if (a->delta_de != b->delta_de) return a->delta_de > b->delta_de;
                          return a->neuron < b->neuron;
                      });
            for (const auto* r : sorted) fractions.push_back(r->fraction_of_head_de);
        }
        for (int r = 0; r < max_rank; ++r) {
            if (static_cast<std::size_t>(r) >= fractions.size()) break;
            for (std::size_t t = 0; t < thresholds.size(); ++t)
                if (fractions[static_cast<std::size_t>(r)] >= thresholds[t])
                    m.cells[static_cast<std::size_t>(r) * thresholds.size() + t] += 1.0;
        }
    }
    for (double& cell : m.cells) cell /= static_cast<double>(m.n_tokens);
    return m;
}

CumulativeCurve cumulative_abs_change(std::span<const NeuronRepairRecord> token_records) {
    CumulativeCurve curve;
    if (token_records.empty()) {
        curve.degenerate = true;
        return curve;
    }
    std::vector<const NeuronRepairRecord*> sorted;
    sorted.reserve(token_records.size());
    for (const auto& r : token_records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const NeuronRepairRecord* a, const NeuronRepairRecord* b) {
                  if (a->delta_de != b->delta_de) return a->delta_de > b->delta_de;
                  return a->neuron < b->neuron;
              });
    double total = 0.0;
    for (const auto* r : sorted) total += std::abs(r->delta_de);
    if (total == 0.0) {
        curve.degenerate = true;
        return curve;
    }
    curve.share.reserve(sorted.size());
    double prefix = 0.0;
    for (const auto* r : sorted) {
        prefix += std::abs(r->delta_de);
        curve.share.push_back(prefix / total);
    }
    return curve;
}

std::vector<int> top_repairing_neurons(std::span<const NeuronRepairRecord> token_records, int k) {
    std::vector<const NeuronRepairRecord*> repairing;
    for (const auto& r : token_records)
        if (r.delta_de > 0.0) repairing.push_back(&r);
    std::sort(repairing.begin(), repairing.end(),
              [](const NeuronRepairRecord* a, const NeuronRepairRecord* b) {
                  if (a->delta_de != b->delta_de) return a->delta_de > b->delta_de;
                  return a->neuron < b->neuron;
              });
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (const auto* r : repairing) {
        if (static_cast<int>(out.size()) >= k) break;
        out.push_back(r->neuron);
    }
    return out;
}

OverlapStats neuron_overlap(std::span<const std::vector<int>> per_token_sets, int k) {
    if (per_token_sets.size() < 2)
        throw ContractError("neuron_overlap requires at least two tokens");
    OverlapStats stats;
    stats.n_tokens = static_cast<std::int64_t>(per_token_sets.size());

    std::map<int, std::int64_t> counts;
    for (const std::vector<int>& set : per_token_sets) {
        if (static_cast<int>(set.size()) < k) ++stats.n_short_sets;
        for (int neuron : set) ++counts[neuron];
    }
    stats.frequency.reserve(counts.size());
    for (const auto& [neuron, count] : counts)
        stats.frequency.emplace_back(neuron,
                                     static_cast<double>(count) / static_cast<double>(stats.n_tokens));
    std::sort(stats.frequency.begin(), stats.frequency.end(),
              [](const auto& a, const auto& b) {
                  if (a.second != b.second) return a.second > b.second;
                  return a.first < b.first;
              });
    if (!stats.frequency.empty()) {
        stats.max_neuron = stats.frequency.front().first;
        stats.max_frequency = stats.frequency.front().second;
    }
    return stats;
}

ErasureClass classify_erasure(const NeuronRepairRecord& record) {
    if (record.de_clean_neuron < 0.0 && record.delta_de > 0.0)
        return ErasureClass::ErasureAntiErased;
    if (record.de_clean_neuron > 0.0 && record.delta_de < 0.0) return ErasureClass::PositiveLoss;
    return ErasureClass::Other;
}

std::string to_string(ErasureClass c) {
    switch (c) {
        case ErasureClass::ErasureAntiErased: return "erasure_anti_erased";
        case ErasureClass::PositiveLoss: return "positive_loss";
        case ErasureClass::Other: return "other";
    }
    return "?";
}

} // namespace selfrepair
