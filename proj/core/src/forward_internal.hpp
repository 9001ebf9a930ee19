#pragma once

// Shared forward kernel. Plain forward passes and every intervention run the
// same code path so no-op interventions reproduce clean traces bit-for-bit.
// Not installed.

#include <vector>

#include "selfrepair/model.hpp"
#include "selfrepair/trace.hpp"

namespace selfrepair::internal {

struct InterventionPlan {
    enum class TargetKind { None, Head, Mlp };

    TargetKind target_kind = TargetKind::None;
    int target_layer = -1;
    int target_head = -1;
    const std::vector<float>* replacement = nullptr; // [seq][d_model] output rows

    bool freeze_downstream = false;  // patch downstream outputs to clean values
    bool freeze_final_scale = false; // reuse clean S_k

    // Clean trace over the same tokens; required by the freeze flags, enables
    // resuming at the target layer otherwise.
    const ForwardTrace* clean = nullptr;

    // Reinjection: vectors (already scaled) added to the residual stream
    // entering inject_layer.
    int inject_layer = -1;
    const std::vector<float>* inject = nullptr; // [seq][d_model]

    bool has_stamp = false;
    InterventionStamp stamp;
};

// `recycle` donates its buffers to the new trace; every element is fully
// rewritten, so recycling only avoids allocation and zero-fill.
ForwardTrace run_forward(const Model& model, const TokenSequence& tokens,
                         const InterventionPlan* plan, ForwardTrace&& recycle = {});

inline constexpr float kNormEps = 1e-5f;

} // namespace selfrepair::internal
