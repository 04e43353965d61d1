#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calclab/corpus.hpp"
#include "calclab/model.hpp"

namespace calclab {

// `Direct` pins every other node to its reference activation, so only the
// patched node's direct path to the logits stays open. `ThroughMlp` pins the
// other attention heads but lets MLPs recompute, so effects may also route
// through downstream MLPs. The two disagree on purpose; ThroughMlp is the
// default.
enum class PatchMode { Direct, ThroughMlp };

std::string patch_mode_name(PatchMode mode);
PatchMode patch_mode_from_name(const std::string& name);

struct NodeEffect {
    NodeId node;
    double mean = 0.0;
    double stddev = 0.0;
    int count = 0;
};

struct EffectMap {
    std::vector<NodeEffect> effects;  // in all_nodes() order
    PatchMode mode = PatchMode::ThroughMlp;
    bool full_sequence = false;
    int pairs_used = 0;
    int pairs_skipped = 0;  // |logit_o| below the denominator guard
    std::string model_hash;
    std::string dataset_hash;

    const NodeEffect* find(const NodeId& node) const;
};

struct SweepOptions {
    PatchMode mode = PatchMode::ThroughMlp;
    bool full_sequence = false;  // patch/freeze at every position instead of END only
    double eps_denominator = 1e-6;
    int jobs = 1;
};

// Relative change of the answer logit, per node, averaged over pairs:
// s = (logit_patched - logit_clean) / logit_clean.
double causal_effect(double logit_clean, double logit_patched);

EffectMap path_patch_sweep(const ModelState& state, std::span<const PromptPair* const> pairs, const SweepOptions& opts = {});
EffectMap path_patch_sweep(const ModelState& state, const std::vector<const PromptPair*>& pairs, const SweepOptions& opts = {});

struct KeySelection {
    double tau = 0.05;
    int top_k = 0;                   // 0 = no truncation
    std::vector<NodeEffect> heads;   // sorted by |mean| descending
    std::vector<NodeEffect> mlps;    // same order rule
    std::string effect_map_hash;

    std::vector<NodeId> head_ids() const;
    std::vector<int> mlp_layer_ids() const;
    std::vector<NodeId> all_ids() const;
};

// Nodes with mean effect <= -tau, strongest first; optional joint top_k cut.
KeySelection select_key(const EffectMap& effects, double tau, int top_k = 0);

// Mean END-position activation of each node over the counterfactual prompts.
std::vector<std::pair<NodeId, Tensor>> mean_node_activations(const ModelState& state, std::span<const NodeId> nodes,
                                                             std::span<const PromptPair* const> cf_pairs, int jobs = 1);

// Accuracy on eval_pairs with the listed nodes pinned to their mean
// counterfactual activation. Empty node list = plain accuracy.
double mean_ablate(const ModelState& state, std::span<const NodeId> nodes, std::span<const PromptPair* const> cf_pairs,
                   std::span<const PromptPair* const> eval_pairs, int jobs = 1);

struct KnockoutCurve {
    std::string ordering;  // "effect" | "random"
    std::uint64_t seed = 0;
    std::vector<NodeId> order;      // heads in knockout order
    std::vector<double> accuracy;   // accuracy[k] after knocking out the first k heads
};

KnockoutCurve knockout_curve(const ModelState& state, const EffectMap& effects, const std::string& ordering, int k_max,
                             std::uint64_t seed, std::span<const PromptPair* const> cf_pairs,
                             std::span<const PromptPair* const> eval_pairs, int jobs = 1);

struct TransferResult {
    double baseline = 0.0;
    double knocked = 0.0;
    double relative_drop() const { return baseline > 0.0 ? (baseline - knocked) / baseline : 0.0; }
};

// Knock out nodes selected on one family and evaluate on another.
TransferResult transfer_knockout(const ModelState& state, std::span<const NodeId> nodes,
                                 std::span<const PromptPair* const> cf_pairs,
                                 std::span<const PromptPair* const> eval_pairs, int jobs = 1);

// Keeps only pairs whose reference answer the model actually predicts
// (the upstream filter the sweep precondition asks for).
std::vector<const PromptPair*> filter_correct(const ModelState& state, std::span<const PromptPair* const> pairs, int jobs = 1);

std::string model_hash(const ModelState& state);

}  // namespace calclab
