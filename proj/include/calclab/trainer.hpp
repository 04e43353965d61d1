#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "calclab/corpus.hpp"
#include "calclab/model.hpp"

namespace calclab {

struct TrainConfig {
    double lr = 1e-3;
    int batch_size = 32;
    int steps = 1000;
    std::string optimizer = "adam";  // "adam" | "sgd"
    double warmup_ratio = 0.05;
    bool cosine_decay = true;
    double weight_decay = 0.0;  // decoupled; skipped for 1-D tensors
    std::uint64_t seed = 0;
    std::string loss_positions = "answer";  // "answer" | "all"
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    int eval_every = 50;               // 0 = evaluate only at the end
    double early_stop_accuracy = 0.0;  // stop once held-out accuracy reaches this; 0 disables

    void validate() const;
};

// The set of components precise tuning is allowed to touch.
struct TuneMask {
    std::vector<NodeId> heads;
    std::vector<int> mlp_layers;

    bool empty() const { return heads.empty() && mlp_layers.empty(); }
    void validate(const ModelConfig& cfg) const;
    // h_i: number of selected heads per layer (index = layer)
    std::vector<int> heads_per_layer(const ModelConfig& cfg) const;
};

struct TrainReport {
    std::vector<double> loss_curve;                       // one entry per step
    std::vector<std::pair<int, double>> accuracy_curve;   // (step, held-out accuracy)
    double final_accuracy = 0.0;
    bool reached_target = false;   // early-stop / >= 0.95 style targets, when configured
    int steps_run = 0;
    std::int64_t tuned_params = 0;
    std::int64_t total_params = 0;
    double samples_per_sec = 0.0;  // wall clock; kept out of deterministic artifacts
    std::vector<std::pair<std::string, double>> node_deltas;  // node -> ||param delta||
};

// From-random training on reference sentences (the stand-in for a pretrained model).
TrainReport pretrain(ModelState& state, const Dataset& data, const TrainConfig& cfg);

// All-parameter fine-tuning, the comparison arm for precise tuning.
TrainReport full_sft(ModelState& state, const Dataset& data, const TrainConfig& cfg);

// Updates only the masked heads' wq/wk/wv/wo blocks and the masked MLP
// layers. Per-layer head gradients are rescaled by H/h_i before the
// optimizer sees them. Everything outside the mask is untouched, bit for bit.
TrainReport precise_sft(ModelState& state, const Dataset& data, const TuneMask& mask, const TrainConfig& cfg,
                        bool allow_empty = false);

// Fraction of samples (unique by sentence) whose answer token is the argmax
// at END. Samples that fail `only_template` filters etc. are the caller's business.
double evaluate_accuracy(const ModelState& state, std::span<const PromptPair* const> samples, int jobs = 1);
double evaluate_accuracy(const ModelState& state, const std::vector<const PromptPair*>& samples, int jobs = 1);

// report.json + loss.csv + accuracy.csv + deltas.csv (+ timing.json for the
// wall-clock figures, kept separate so reruns stay byte-identical).
void write_train_report(const TrainReport& report, const std::filesystem::path& dir);

}  // namespace calclab
