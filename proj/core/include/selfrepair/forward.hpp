#pragma once

#include "selfrepair/model.hpp"
#include "selfrepair/trace.hpp"

namespace selfrepair {

/// Full-sequence teacher-forced forward pass in fp32. Causal masking holds
/// (position k attends only to positions <= k) and identical inputs produce a
/// bit-identical trace. Throws DataError for invalid tokens.
ForwardTrace forward(const Model& model, const TokenSequence& tokens);

} // namespace selfrepair
