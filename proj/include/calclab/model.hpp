#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "calclab/ops.hpp"
#include "calclab/tensor.hpp"

namespace calclab {

struct ModelConfig {
    int layers = 4;
    int heads = 8;
    int model_dim = 64;
    int mlp_hidden = 256;
    int vocab = 0;
    int max_seq = 64;
    double layernorm_eps = 1e-5;
    std::string nonlinearity = "gelu";  // "gelu" or "silu"

    int head_dim() const { return model_dim / heads; }
    void validate() const;
};

// Address of one intervention-addressable computation unit.
struct NodeId {
    enum class Kind { Head, Mlp };
    Kind kind = Kind::Head;
    int layer = 0;
    int head = 0;  // meaningful for Kind::Head only

    static NodeId attention(int layer, int head) { return {Kind::Head, layer, head}; }
    static NodeId mlp(int layer) { return {Kind::Mlp, layer, 0}; }

    bool operator==(const NodeId& o) const { return kind == o.kind && layer == o.layer && (kind == Kind::Mlp || head == o.head); }
    bool is_head() const { return kind == Kind::Head; }

    std::string str() const;                      // "h1.3" / "mlp2"
    static NodeId parse(const std::string& s);    // inverse of str()
};

struct NodeIdHash {
    std::size_t operator()(const NodeId& n) const {
        return std::hash<int>()(static_cast<int>(n.kind) * 1000003 + n.layer * 1009 + (n.is_head() ? n.head : -1));
    }
};

// Enumeration order used everywhere (sweeps, CSV, reports): per layer, heads
// 0..H-1 followed by that layer's MLP.
std::vector<NodeId> all_nodes(const ModelConfig& cfg);
std::vector<NodeId> all_heads(const ModelConfig& cfg);

struct HeadWeights {
    Tensor wq, wk, wv;  // [d, d/H]
    Tensor wo;          // [d/H, d]
};

struct LayerWeights {
    Tensor ln1_gain, ln1_bias;
    std::vector<HeadWeights> heads;
    Tensor ln2_gain, ln2_bias;
    Tensor mlp_w_in, mlp_b_in;    // [d, hidden], [hidden]
    Tensor mlp_w_out, mlp_b_out;  // [hidden, d], [d]
};

struct ModelState {
    ModelConfig config;
    Tensor tok_embed;  // [V, d]
    Tensor pos_embed;  // [max_seq, d]
    std::vector<LayerWeights> layers;
    Tensor final_ln_gain, final_ln_bias;
    Tensor unembed;  // [d, V]  (untied from tok_embed)
};

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed);

// Stable iteration over every parameter tensor with its canonical name.
void for_each_parameter(ModelState& state, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_parameter(const ModelState& state, const std::function<void(const std::string&, const Tensor&)>& fn);
std::int64_t parameter_count(const ModelState& state);

// Parameter tensors belonging to one node (the unit precise tuning masks).
std::vector<Tensor> node_parameters(ModelState& state, const NodeId& node);

// Per-run record of every node output. Head outputs are post-W_O residual
// contributions; mlp_in/mlp_out are the residual stream entering/leaving the
// MLP block, so the MLP's own contribution is mlp_out - mlp_in.
struct ActivationCache {
    std::vector<std::vector<Tensor>> head_out;  // [L][H], each [N, d]
    std::vector<std::vector<Tensor>> attn;      // [L][H], each [N, N]
    std::vector<Tensor> mlp_in;                 // [L], each [N, d]
    std::vector<Tensor> mlp_out;                // [L], each [N, d]
    std::vector<Tensor> resid;                  // [L+1] layer-boundary snapshots, [N, d]
    Tensor logits;                              // [N, V]

    bool empty() const { return head_out.empty(); }
    // Residual contribution written by `node` (head output, or MLP delta).
    Tensor node_output(const NodeId& node) const;
};

enum class InterventionKind { Replace, Freeze };

// value is either one row [d] applied at every listed position, or a full
// [N, d] whose row p is applied at position p. Empty positions = END only.
struct Intervention {
    InterventionKind kind = InterventionKind::Replace;
    Tensor value;
    std::vector<int> positions;
};

class InterventionSet {
  public:
    void set(const NodeId& node, Intervention iv);
    const Intervention* find(const NodeId& node) const;
    std::size_t size() const { return map_.size(); }
    bool empty() const { return map_.empty(); }

  private:
    std::unordered_map<NodeId, Intervention, NodeIdHash> map_;
};

struct ForwardResult {
    Tensor logits;  // [N, V]
    ActivationCache cache;
};

struct ForwardOptions {
    const InterventionSet* interventions = nullptr;
    Tape* tape = nullptr;
    bool want_cache = true;
};

ForwardResult forward(const ModelState& state, std::span<const int> tokens, const ForwardOptions& opts = {});

// Low-rank composition of one head: (W_QK, W_OV), both [d, d], where
// W_QK = wq * wk^T scores token pairs and W_OV = wv * wo maps what the head
// reads to what it writes into the stream.
std::pair<Tensor, Tensor> composed_matrices(const ModelState& state, int layer, int head);

// Raw pre-softmax logit of `answer_token` at `position` (default: END = last row).
double answer_logit(const Tensor& logits, int answer_token, std::int64_t position = -1);

}  // namespace calclab
