#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace selfrepair {

/// Result of one invariant check on a seeded toy model.
struct IdentityCheck {
    std::string name;
    bool pass = false;
    double worst = 0.0; // worst observed deviation (0 for exact/bitwise checks)
    double tolerance = 0.0;
    std::string detail;
};

struct IdentityReport {
    std::vector<IdentityCheck> checks;

    bool all_pass() const;
};

/// Runs the full invariant suite: residual reconstruction, direct-effect
/// decomposition closure, head/neuron sub-sums, the frozen-path baseline, the
/// two-term norm identity across norm kinds and block wirings, breakdown
/// closure, no-op intervention bit-exactness, causality, and determinism.
IdentityReport run_identity_suite(std::uint64_t seed);

} // namespace selfrepair
