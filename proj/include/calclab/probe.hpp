#pragma once

#include <array>
#include <span>
#include <vector>

#include "calclab/corpus.hpp"
#include "calclab/model.hpp"

namespace calclab {

// Mean attention mass (per position, from the END query row) a head gives to
// each token role. Roles partition every prompt position.
struct AttentionProfile {
    NodeId head;
    double operand_a = 0.0, operand_b = 0.0, operator_token = 0.0, other = 0.0;
    double operand_combined = 0.0;  // mean over the union of A and B positions
    int samples = 0;
    std::vector<std::array<double, 4>> raw;  // optional per-sample role means
};

AttentionProfile attention_profile(const ModelState& state, const NodeId& head, std::span<const PromptPair* const> samples,
                                   bool keep_raw = false);

// Per-layer cosine series between an MLP-side vector at END and unembedding
// columns for the tracked tokens. `flagged` lists layers where a denominator
// fell below the guard and the value was reported as 0.
struct ProbeSeries {
    std::vector<double> a, b, c, other;
    std::vector<int> flagged;
    int samples = 0;
};

// What the MLP receives: cos(stream at MLP input, W_U[token]).
ProbeSeries mlp_reception(const ModelState& state, std::span<const PromptPair* const> samples, bool correct_only = true);

// What the MLP writes: cos(MLP output delta, W_U[token]).
ProbeSeries mlp_generation(const ModelState& state, std::span<const PromptPair* const> samples, bool correct_only = true);

struct TokenTrajectory {
    std::vector<std::vector<std::pair<int, double>>> ranking;  // per layer, digit tokens scored descending
    int answer_token = -1;
    int predicted_token = -1;    // argmax of the model's final END logits
    int first_stable_layer = -1; // first layer from which the answer stays top-ranked
};

// Per-layer ranking of digit tokens by the MLP delta projection for a single
// prompt. raw_dot scores with the unnormalized inner product instead of cosine.
TokenTrajectory token_trajectory(const ModelState& state, std::span<const int> tokens, int answer_token, bool raw_dot = false);

}  // namespace calclab
