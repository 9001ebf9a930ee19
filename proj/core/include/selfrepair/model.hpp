#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "selfrepair/component.hpp"
#include "selfrepair/config.hpp"

namespace selfrepair {

/// Pre-tokenized input. Every id must be < vocab_size and the length at most
/// max_seq of the model it is fed to.
struct TokenSequence {
    std::vector<std::int32_t> ids;

    int length() const { return static_cast<int>(ids.size()); }
};

/// Per-layer parameters. Projection matrices are row-major with the shapes
/// noted; wo is stored with one contiguous d_head-row block per head so head
/// output slices stay addressable.
struct LayerWeights {
    std::vector<float> norm1_gain, norm1_bias; // [d_model]; bias empty for RMSNorm
    std::vector<float> wq, wk, wv;             // [n_heads*d_head, d_model]
    std::vector<float> wo;                     // [n_heads*d_head, d_model]
    std::vector<float> bo;                     // [d_model]
    std::vector<float> norm2_gain, norm2_bias; // [d_model]; bias empty for RMSNorm
    std::vector<float> win;                    // [d_model, d_mlp]
    std::vector<float> bin;                    // [d_mlp]
    std::vector<float> wout;                   // [d_mlp, d_model]
    std::vector<float> bout;                   // [d_model]
};

struct ModelWeights {
    std::vector<float> embed_tok; // [vocab, d_model]
    std::vector<float> embed_pos; // [max_seq, d_model]; empty unless absolute-learned
    std::vector<LayerWeights> layers;
    std::vector<float> final_norm_gain, final_norm_bias; // bias empty for RMSNorm
    std::vector<float> unembed_w; // [vocab, d_model]
    std::vector<float> unembed_b; // [vocab] or empty
};

/// Immutable model: config + weights + derived readout constants. Instances
/// are safe to share across threads; a forward pass never mutates the model.
class Model {
public:
    Model(ModelConfig config, ModelWeights weights);

    const ModelConfig& config() const { return config_; }
    const ModelWeights& weights() const { return weights_; }

    /// FNV-1a over the config string and all tensor payloads, for result
    /// provenance metadata.
    std::uint64_t weight_hash() const { return weight_hash_; }

    /// Vocabulary-mean unembedding row and bias, precomputed for readout
    /// centering.
    std::span<const double> mean_unembed_row() const { return mean_unembed_row_; }
    double mean_unembed_bias() const { return mean_unembed_bias_; }

    /// MLP in-projection of one layer transposed to [d_mlp, d_model], kept for
    /// cache-friendly row dots in the forward pass.
    std::span<const float> win_transposed(int layer) const;

    std::span<const float> unembed_row(int token) const;
    std::span<const float> embed_row(int token) const;

    /// Throws DataError if the sequence is empty, longer than max_seq, or
    /// holds an out-of-range token id.
    void validate_tokens(const TokenSequence& tokens) const;

private:
    ModelConfig config_;
    ModelWeights weights_;
    std::vector<double> mean_unembed_row_;
    std::vector<float> win_transposed_; // [n_layers][d_mlp][d_model]
    double mean_unembed_bias_ = 0.0;
    std::uint64_t weight_hash_ = 0;
};

/// Deterministic pseudo-random weights scaled so forward activations stay
/// finite (projections scaled by 1/sqrt(d_model)). The same (config, seed)
/// pair always yields bit-identical weights.
Model init_toy_model(const ModelConfig& config, std::uint64_t seed);

/// Loads a model from a named-tensor container whose metadata carries the
/// architecture. Throws DataError naming the offending tensor on a missing
/// tensor, shape mismatch, unknown tensor, or non-finite value.
Model load_model(const std::filesystem::path& path);

/// As above but verifies the file against an expected architecture.
Model load_model(const std::filesystem::path& path, const ModelConfig& expected_config);

/// Writes the model with its architecture embedded in the container metadata.
/// Writing and reloading reproduces bit-identical weights.
void save_model(const Model& model, const std::filesystem::path& path);

} // namespace selfrepair
