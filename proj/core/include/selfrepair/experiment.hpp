#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "selfrepair/component.hpp"
#include "selfrepair/config.hpp"
#include "selfrepair/results.hpp"

namespace selfrepair {

/// Desk-scale default architecture used when experiments run from a toy seed
/// instead of a weight file: 4 layers, 8 heads, d_model 128, d_mlp 512,
/// vocab 256, parallel attention, LayerNorm, rotary positions.
ModelConfig default_toy_config();

/// Experiment description parsed from a flat key/value config file. Keys match
/// the field names below; `targets` holds head names like "L3H1" (or "all"),
/// `alphas` a comma list. Unknown keys are rejected.
struct ExperimentConfig {
    std::string experiment; // head-sweep | ln-analysis | breakdown | neuron-analysis | reinjection
    std::string model_path;
    std::optional<std::uint64_t> toy_seed;
    ModelConfig toy_config = default_toy_config();
    std::string corpus_path;
    std::vector<std::string> ablation = {"resample"}; // zero | mean | resample
    std::vector<ComponentId> targets;                 // empty = all heads
    int neuron_layer = -1;                            // -1 = final MLP layer
    double fraction = 0.02;                           // top-percentile filter
    std::vector<double> alphas = {1.0, 3.0, 5.0};
    std::string output_path;
    std::uint64_t seed = 0;
    bool emit_tokens = false;
    std::string format = "csv";
    int batch_size = 16;
    int threads = 0; // 0 = hardware concurrency
    bool truncate = false;
    bool resample_shuffle = false; // seeded shuffle pairing instead of (i+1) mod B
    // Frozen baselines for head-sweep/breakdown: patch downstream outputs
    // and/or reuse the clean final-norm scale during every ablation.
    bool freeze_downstream = false;
    bool freeze_final_scale = false;
    // Debug column for ln-analysis: the unclipped norm share of the direct
    // effect. Its per-token values are wild; the clipped mean is the headline.
    bool emit_unclipped = false;
    // make-toy-model / make-corpus inputs
    int n_sequences = 32;
    int seq_len = 64;

    static ExperimentConfig parse_file(const std::filesystem::path& path);
    static ExperimentConfig parse_text(const std::string& text);

    /// Canonical key/value echo of the effective config, for result metadata.
    std::vector<std::pair<std::string, std::string>> echo() const;

    /// Throws ConfigError when a field required by `kind` is missing or
    /// malformed.
    void validate_for(const std::string& kind) const;
};

/// Primary table plus bounded side tables; large per-token streams are written
/// during the run and listed in `streamed`.
struct ExperimentOutput {
    ResultsTable primary;
    std::vector<std::pair<std::string, ResultsTable>> extras; // suffix -> table
    std::vector<std::filesystem::path> streamed;
};

/// Individually ablates each target head over the corpus and aggregates, per
/// head, the mean clean direct effect and mean logit change over all tokens
/// plus the mean self-repair over the top-fraction tokens by direct effect.
/// Per-token rows stream to "<stem>.tokens.<ext>" when emit_tokens is set.
ExperimentOutput run_head_sweep(const ExperimentConfig& config);

/// Final-norm scale analysis: per (head, ablation mode), the clean/ablated
/// scale ratio distribution over the top-fraction tokens, the clipped norm
/// share of the direct effect, and the two-term identity residual from a
/// frozen-downstream companion run.
ExperimentOutput run_ln_experiment(const ExperimentConfig& config);

/// Self-repair breakdown rows per (head, top-fraction token): downstream-head
/// term, downstream-MLP term, norm residual term, and the closure residual.
ExperimentOutput run_breakdown_experiment(const ExperimentConfig& config);

/// Neuron-level analysis of a downstream MLP layer under head ablations:
/// threshold-frequency matrix over ranked repairing neurons, cumulative
/// absolute-change curves, and cross-token top-10 overlap.
ExperimentOutput run_neuron_experiment(const ExperimentConfig& config);

/// Head-output reinjection sweep over the configured alphas; per head, the
/// slope of mean direct-effect change against alpha classifies it as
/// self-reinforcing (positive) or self-repressing (negative).
ExperimentOutput run_reinjection_experiment(const ExperimentConfig& config);

/// Dispatches by config.experiment.
ExperimentOutput run_experiment(const ExperimentConfig& config);

/// Writes the primary table to config.output_path and extras next to it.
/// Returns every file written (excluding already-streamed ones).
std::vector<std::filesystem::path> export_experiment(const ExperimentOutput& output,
                                                     const ExperimentConfig& config);

} // namespace selfrepair
