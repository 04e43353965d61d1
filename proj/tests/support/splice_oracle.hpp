#pragma once

#include <span>
#include <vector>

#include "calclab/model.hpp"
#include "calclab/patching.hpp"

namespace calclab::testing {

// Independent reference for the intervention engine: rebuilds the END-position
// residual by hand from the two activation caches (patched node from the
// counterfactual run, heads from the reference run, MLPs re-derived with plain
// loops when the mode leaves them live) and unembeds it. Shares no forward
// code with the engine it checks.
std::vector<double> splice_patched_logits(const ModelState& state, std::span<const int> ref_tokens,
                                          const ActivationCache& ref, const ActivationCache& cf, const NodeId& patched,
                                          PatchMode mode);

}  // namespace calclab::testing
