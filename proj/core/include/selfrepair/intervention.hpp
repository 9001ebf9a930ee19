#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "selfrepair/forward.hpp"
#include "selfrepair/model.hpp"
#include "selfrepair/trace.hpp"

namespace selfrepair {

/// How a targeted component's output is replaced (or, for Reinject, how the
/// residual stream feeding the target head's layer is modified).
struct AblationMode {
    enum class Kind { Zero, Mean, Resample, Reinject };

    Kind kind = Kind::Zero;
    std::vector<float> mean_vector;              // Mean: width d_model
    const ForwardTrace* source_trace = nullptr;  // Resample
    std::vector<int> source_position_map;        // Resample: empty = same index
    double alpha = 0.0;                          // Reinject scale

    static AblationMode zero();
    static AblationMode mean(std::vector<float> vec);
    static AblationMode resample(const ForwardTrace& source, std::vector<int> position_map = {});
    static AblationMode reinject(double alpha);
};

/// Declarative intervention: the target (a Head or MlpLayer), the mode, and
/// freeze controls. freeze_downstream patches every component downstream of
/// the target to its clean output instead of recomputing it; freeze_final_scale
/// reuses the clean S_k in the final norm. Reinject is a clean-context rerun,
/// not an ablation, and rejects either freeze flag.
struct InterventionSpec {
    ComponentId target;
    AblationMode mode;
    bool freeze_downstream = false;
    bool freeze_final_scale = false;
};

/// Default resample pairing: the (i+1) mod B derangement, so every sequence
/// draws head outputs from a different sequence at the same position index.
/// Throws ContractError for batch_size < 2.
std::vector<int> resample_pairing(int batch_size);

/// Seeded random derangement (a single cycle); deterministic for a fixed seed.
std::vector<int> resample_pairing(int batch_size, std::uint64_t seed);

/// Per-head mean output vectors over every (sequence, position) of a batch,
/// accumulated in double in a fixed order.
struct HeadMeans {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    std::int64_t n_samples = 0;
    std::vector<float> mean; // [n_layers][n_heads][d_model]

    std::span<const float> at(int layer, int head) const;
};

HeadMeans compute_mean_output(const Model& model, std::span<const TokenSequence> batch);

/// Runs the forward pass with the intervention applied before downstream
/// computation. When `clean` is supplied it is reused as the frozen-value
/// source and to resume computation at the target layer; otherwise a clean
/// pass runs internally if the spec needs one. Component outputs upstream of
/// the target are always bit-identical to clean. `recycle` optionally donates
/// a spent trace's buffers; every element is rewritten.
ForwardTrace run_with_intervention(const Model& model, const TokenSequence& tokens,
                                   const InterventionSpec& spec,
                                   const ForwardTrace* clean = nullptr,
                                   ForwardTrace&& recycle = {});

/// Reinjection experiment for one head: reruns the model with alpha times the
/// head's clean output added to the residual stream entering its own layer
/// (pre-norm, so same-layer siblings see it too), and reports the head's
/// direct effect before and after at each scoring position. Both effects use
/// the clean final-norm scale. alpha = 0 reproduces the clean trace exactly.
struct ReinjectionResult {
    std::vector<double> clean_de; // per scoring position
    std::vector<double> new_de;
    ForwardTrace trace;
};

ReinjectionResult reinject_head(const Model& model, const TokenSequence& tokens, ComponentId head,
                                double alpha, const ForwardTrace* clean = nullptr);

} // namespace selfrepair
